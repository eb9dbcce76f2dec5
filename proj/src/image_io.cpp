#include "tio/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tio {

namespace {

std::vector<unsigned char> readAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void writeAll(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint16_t toCount(double v) {
  return static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L));
}

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string pgmToken(const std::vector<unsigned char>& buf, std::size_t& pos, const std::string& name) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(buf[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < buf.size() && !std::isspace(buf[pos])) tok.push_back(static_cast<char>(buf[pos++]));
  if (tok.empty()) throw IoError(name + ": truncated PGM header");
  return tok;
}

void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

void writePgm16(const std::filesystem::path& path, const RadiometricImage& image) {
  std::string bytes = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) +
                      "\n65535\n";
  bytes.reserve(bytes.size() + 2 * static_cast<std::size_t>(image.width() * image.height()));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const std::uint16_t v = toCount(image(x, y));
      bytes.push_back(static_cast<char>(v >> 8));
      bytes.push_back(static_cast<char>(v & 0xff));
    }
  }
  writeAll(path, bytes);
}

RadiometricImage readPgm16(const std::filesystem::path& path, double timestamp) {
  const auto buf = readAll(path);
  const std::string name = path.string();
  std::size_t pos = 0;
  if (pgmToken(buf, pos, name) != "P5") throw IoError(name + ": not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pgmToken(buf, pos, name));
    h = std::stoi(pgmToken(buf, pos, name));
    maxval = std::stoi(pgmToken(buf, pos, name));
  } catch (const std::logic_error&) {
    throw IoError(name + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError(name + ": bad PGM dimensions");
  ++pos;  // single whitespace after maxval
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * bpp;
  if (buf.size() < pos + need) {
    throw IoError(name + ": truncated PGM data, missing " + std::to_string(pos + need - buf.size()) +
                  " bytes");
  }
  ImageArray data(h, w);
  for (int i = 0; i < w * h; ++i) {
    const unsigned char* p = buf.data() + pos + static_cast<std::size_t>(i) * bpp;
    data(i / w, i % w) = bpp == 2 ? static_cast<double>((p[0] << 8) | p[1]) : static_cast<double>(p[0]);
  }
  return RadiometricImage(std::move(data), timestamp);
}

void writeTiff16(const std::filesystem::path& path, const RadiometricImage& image) {
  const std::uint32_t w = static_cast<std::uint32_t>(image.width());
  const std::uint32_t h = static_cast<std::uint32_t>(image.height());
  const std::uint32_t data_bytes = w * h * 2;
  constexpr std::uint16_t kEntries = 9;
  const std::uint32_t ifd_offset = 8 + data_bytes;

  std::string s = "II";
  put16(s, 42);
  put32(s, ifd_offset);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) put16(s, toCount(image(static_cast<int>(x), static_cast<int>(y))));
  }
  auto entry = [&s](std::uint16_t tag, std::uint16_t type, std::uint32_t count, std::uint32_t value) {
    put16(s, tag);
    put16(s, type);
    put32(s, count);
    if (type == 3 && count == 1) {
      put16(s, static_cast<std::uint16_t>(value));
      put16(s, 0);
    } else {
      put32(s, value);
    }
  };
  put16(s, kEntries);
  entry(256, 4, 1, w);           // ImageWidth
  entry(257, 4, 1, h);           // ImageLength
  entry(258, 3, 1, 16);          // BitsPerSample
  entry(259, 3, 1, 1);           // Compression: none
  entry(262, 3, 1, 1);           // Photometric: BlackIsZero
  entry(273, 4, 1, 8);           // StripOffsets
  entry(277, 3, 1, 1);           // SamplesPerPixel
  entry(278, 4, 1, h);           // RowsPerStrip
  entry(279, 4, 1, data_bytes);  // StripByteCounts
  put32(s, 0);
  writeAll(path, s);
}

RadiometricImage readTiff16(const std::filesystem::path& path, double timestamp) {
  const auto buf = readAll(path);
  const std::string name = path.string();
  if (buf.size() < 8 || buf[0] != 'I' || buf[1] != 'I') {
    throw IoError(name + ": only little-endian TIFF is supported");
  }
  auto rd16 = [&](std::size_t off) -> std::uint32_t {
    if (off + 2 > buf.size()) throw IoError(name + ": truncated TIFF");
    return static_cast<std::uint32_t>(buf[off] | (buf[off + 1] << 8));
  };
  auto rd32 = [&](std::size_t off) -> std::uint32_t {
    if (off + 4 > buf.size()) throw IoError(name + ": truncated TIFF");
    return static_cast<std::uint32_t>(buf[off]) | (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
           (static_cast<std::uint32_t>(buf[off + 2]) << 16) | (static_cast<std::uint32_t>(buf[off + 3]) << 24);
  };
  if (rd16(2) != 42) throw IoError(name + ": bad TIFF magic");
  const std::uint32_t ifd = rd32(4);
  const std::uint32_t n = rd16(ifd);
  std::uint32_t w = 0, h = 0, bits = 0, compression = 1, spp = 1, rows_per_strip = 0;
  std::vector<std::uint32_t> strip_offsets;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t e = ifd + 2 + 12 * i;
    const std::uint32_t tag = rd16(e);
    const std::uint32_t type = rd16(e + 2);
    const std::uint32_t count = rd32(e + 4);
    auto value = [&](std::uint32_t k) -> std::uint32_t {
      const std::size_t size = type == 3 ? 2 : 4;
      const std::size_t base = count * size <= 4 ? e + 8 : rd32(e + 8);
      return type == 3 ? rd16(base + k * size) : rd32(base + k * size);
    };
    switch (tag) {
      case 256: w = value(0); break;
      case 257: h = value(0); break;
      case 258: bits = value(0); break;
      case 259: compression = value(0); break;
      case 273:
        for (std::uint32_t k = 0; k < count; ++k) strip_offsets.push_back(value(k));
        break;
      case 277: spp = value(0); break;
      case 278: rows_per_strip = value(0); break;
      default: break;
    }
  }
  if (w == 0 || h == 0 || bits != 16 || compression != 1 || spp != 1 || strip_offsets.empty()) {
    throw IoError(name + ": only uncompressed single-channel 16-bit TIFF is supported");
  }
  if (rows_per_strip == 0) rows_per_strip = h;
  ImageArray data(h, w);
  for (std::uint32_t y = 0; y < h; ++y) {
    const std::size_t strip = y / rows_per_strip;
    if (strip >= strip_offsets.size()) throw IoError(name + ": missing TIFF strip");
    const std::size_t row_off = strip_offsets[strip] + static_cast<std::size_t>(y % rows_per_strip) * w * 2;
    for (std::uint32_t x = 0; x < w; ++x) data(y, x) = rd16(row_off + 2 * x);
  }
  return RadiometricImage(std::move(data), timestamp);
}

RadiometricImage readImage(const std::filesystem::path& path, double timestamp) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pgm") return readPgm16(path, timestamp);
  if (ext == ".tif" || ext == ".tiff") return readTiff16(path, timestamp);
  throw IoError(path.string() + ": unsupported image extension '" + ext + "'");
}

std::vector<FrameEntry> readFrameIndex(const std::filesystem::path& dir) {
  const auto path = dir / "frames.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("timestamp_s,filename", 0) != 0) throw IoError(path.string() + ": bad header");
  std::vector<FrameEntry> frames;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected timestamp_s,filename");
    }
    FrameEntry f;
    try {
      f.timestamp = std::stod(line.substr(0, comma));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad timestamp");
    }
    f.filename = line.substr(comma + 1);
    while (!f.filename.empty() && (f.filename.back() == '\r' || f.filename.back() == ' ')) f.filename.pop_back();
    frames.push_back(std::move(f));
  }
  return frames;
}

void writeFrameIndex(const std::filesystem::path& dir, const std::vector<FrameEntry>& frames) {
  std::ostringstream os;
  os << "timestamp_s,filename\n" << std::setprecision(17);
  for (const auto& f : frames) os << f.timestamp << ',' << f.filename << '\n';
  writeAll(dir / "frames.csv", os.str());
}

FpnBank loadFpnBank(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<FpnPattern> patterns;
  patterns.reserve(files.size());
  for (const auto& f : files) patterns.push_back(patternFromFlatField(readPgm16(f)));
  return FpnBank(std::move(patterns));
}

}  // namespace tio
