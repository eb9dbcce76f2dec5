#include "tio/dataset.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "tio/config.hpp"

namespace tio {

namespace {

std::vector<double> parseNumbers(const std::string& line, char sep, const std::string& where) {
  std::vector<double> out;
  std::string tok;
  std::istringstream in(line);
  while (std::getline(in, tok, sep)) {
    if (sep == ' ' && tok.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stod(tok, &used));
      while (used < tok.size() && (tok[used] == '\r' || tok[used] == ' ')) ++used;
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw IoError(where + ": bad number '" + tok + "'");
    }
  }
  return out;
}

void writeText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::vector<ImuSample> readImuCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("timestamp_s,wx,wy,wz,ax,ay,az", 0) != 0) throw IoError(path.string() + ": bad header");
  std::vector<ImuSample> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto v = parseNumbers(line, ',', path.string() + ":" + std::to_string(lineno));
    if (v.size() != 7) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 7 columns");
    out.push_back({v[0], {v[1], v[2], v[3]}, {v[4], v[5], v[6]}});
  }
  return out;
}

void writeImuCsv(const std::filesystem::path& path, const std::vector<ImuSample>& samples) {
  std::string s = "timestamp_s,wx,wy,wz,ax,ay,az\n";
  for (const auto& m : samples) {
    s += formatDouble(m.t);
    for (int i = 0; i < 3; ++i) s += "," + formatDouble(m.gyro(i));
    for (int i = 0; i < 3; ++i) s += "," + formatDouble(m.accel(i));
    s += "\n";
  }
  writeText(path, s);
}

std::vector<StampedPose> readTum(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<StampedPose> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    for (char& c : line)
      if (c == '\t' || c == '\r' || c == ',') c = ' ';
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    const auto v = parseNumbers(line, ' ', path.string() + ":" + std::to_string(lineno));
    if (v.size() != 8) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns");
    StampedPose p;
    p.t = v[0];
    p.p = {v[1], v[2], v[3]};
    p.q = Eigen::Quaterniond(v[7], v[4], v[5], v[6]);
    if (std::abs(p.q.norm() - 1.0) > 1e-3)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": quaternion is not unit length");
    p.q.normalize();
    out.push_back(p);
  }
  return out;
}

void writeTum(const std::filesystem::path& path, const std::vector<StampedPose>& poses) {
  std::string s;
  for (const auto& p : poses) {
    s += formatDouble(p.t);
    for (int i = 0; i < 3; ++i) s += " " + formatDouble(p.p(i));
    s += " " + formatDouble(p.q.x()) + " " + formatDouble(p.q.y()) + " " + formatDouble(p.q.z()) + " " +
         formatDouble(p.q.w()) + "\n";
  }
  writeText(path, s);
}

RadiometricImage Dataset::frame(std::size_t i) const {
  return readImage(dir / frames.at(i).filename, frames.at(i).timestamp);
}

Dataset loadDataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  Dataset d;
  d.dir = dir;
  d.frames = readFrameIndex(dir);
  d.imu = readImuCsv(dir / "imu.csv");
  if (std::filesystem::exists(dir / "groundtruth.txt")) d.groundtruth = readTum(dir / "groundtruth.txt");
  return d;
}

}  // namespace tio
