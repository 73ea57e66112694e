#include "heatlens/image_io.hpp"

#include <fstream>

namespace heatlens {

namespace {

// next whitespace-separated token, skipping '#' comments to end of line
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) fail_value("read_netpbm", "truncated header");
  return tok;
}

std::size_t parse_dim(const std::string& tok) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(tok, &pos);
  } catch (const std::exception&) {
    fail_value("read_netpbm", "malformed header field '" + tok + "'");
  }
  if (pos != tok.size() || v == 0)
    fail_value("read_netpbm", "malformed header field '" + tok + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

RawImage read_netpbm(std::istream& in) {
  const std::string magic = next_token(in);
  RawImage img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    fail_value("read_netpbm", "unsupported magic '" + magic + "' (want P5 or P6)");
  img.width = parse_dim(next_token(in));
  img.height = parse_dim(next_token(in));
  const std::size_t maxval = parse_dim(next_token(in));
  if (maxval != 255) fail_value("read_netpbm", "only maxval 255 is supported");
  // single whitespace byte separates header from payload; next_token already
  // consumed it as the delimiter of maxval
  const std::size_t n = img.width * img.height * img.channels;
  img.bytes.resize(n);
  in.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    fail_value("read_netpbm", "payload shorter than header dimensions promise");
  return img;
}

void write_netpbm(std::ostream& out, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3)
    fail_value("write_netpbm", "only 1- or 3-channel images supported");
  if (img.bytes.size() != img.width * img.height * img.channels)
    fail_value("write_netpbm", "payload size does not match dimensions");
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.bytes.data()),
            static_cast<std::streamsize>(img.bytes.size()));
  if (!out) fail_value("write_netpbm", "stream write failed");
}

RawImage read_netpbm_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail_value("read_netpbm", "cannot open " + path);
  return read_netpbm(f);
}

void write_netpbm_file(const std::string& path, const RawImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail_value("write_netpbm", "cannot open " + path + " for writing");
  write_netpbm(f, img);
}

}  // namespace heatlens
