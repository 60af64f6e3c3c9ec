#include "pyrd/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pyrd/errors.hpp"

namespace pyrd {

namespace {

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Tensor4 read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open image '" + path + "'");
  const std::string magic = pgm_token(is);
  if (magic != "P5") {
    throw InputError("'" + path + "' is not a binary PGM (P5) image");
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pgm_token(is));
    h = std::stoi(pgm_token(is));
    maxval = std::stoi(pgm_token(is));
  } catch (const std::exception&) {
    throw InputError("bad PGM header in '" + path + "'");
  }
  if (w < 1 || h < 1 || maxval != 255) {
    throw InputError("unsupported PGM header in '" + path + "' (need 8-bit, maxval 255)");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
    throw InputError("truncated PGM data in '" + path + "'");
  }
  Tensor4 img(1, 1, h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.data[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  return img;
}

void write_pgm(const std::string& path, const Tensor4& image01) {
  if (image01.n != 1 || image01.c != 1) {
    throw InputError("write_pgm expects a (1,1,h,w) tensor, got " + image01.dims_str());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P5\n" << image01.w << " " << image01.h << "\n255\n";
  std::vector<unsigned char> raw(image01.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(image01.data[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("failed writing '" + path + "'");
}

void write_pgm_normalized(const std::string& path, const Tensor4& map) {
  Tensor4 norm = map;
  float mx = 0.0f;
  for (float v : norm.data) mx = std::max(mx, v);
  if (mx > 0.0f) {
    for (float& v : norm.data) v = std::max(0.0f, v) / mx;
  }
  write_pgm(path, norm);
}

void write_density_csv(const std::string& path, const DensityMap& d) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  char buf[40];
  for (int y = 0; y < d.h; ++y) {
    std::string line;
    for (int x = 0; x < d.w; ++x) {
      std::snprintf(buf, sizeof(buf), "%.9g", d.at(y, x));
      if (x) line += ',';
      line += buf;
    }
    line += '\n';
    os << line;
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

DensityMap read_density_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open density CSV '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InputError("bad number '" + cell + "' in '" + path + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw InputError("ragged rows in density CSV '" + path + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("empty density CSV '" + path + "'");
  DensityMap d(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (int y = 0; y < d.h; ++y) {
    for (int x = 0; x < d.w; ++x) d.at(y, x) = rows[y][x];
  }
  return d;
}

AnnotationFile read_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open annotation file '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
    AnnotationFile ann;
    ann.image = j.at("image").get<std::string>();
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) {
        throw InputError("annotation points must be [x, y] pairs in '" + path + "'");
      }
      ann.points.push_back({p[0].get<float>(), p[1].get<float>()});
    }
    return ann;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad annotation JSON '" + path + "': " + e.what());
  }
}

void write_annotations(const std::string& path, const AnnotationFile& ann) {
  nlohmann::json j;
  j["image"] = ann.image;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : ann.points) {
    pts.push_back(nlohmann::json::array({p[0], p[1]}));
  }
  j["points"] = pts;
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed writing '" + path + "'");
}

}  // namespace pyrd
