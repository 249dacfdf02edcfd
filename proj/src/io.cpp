#include "kdvr/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <png.h>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and assume a matching host");

namespace kdvr {

namespace {

using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);  // bit round-trip
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class PlyType { kChar, kUChar, kShort, kUShort, kInt, kUInt, kFloat, kDouble };

size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::kChar:
    case PlyType::kUChar:
      return 1;
    case PlyType::kShort:
    case PlyType::kUShort:
      return 2;
    case PlyType::kInt:
    case PlyType::kUInt:
    case PlyType::kFloat:
      return 4;
    case PlyType::kDouble:
      return 8;
  }
  return 0;
}

PlyType ply_parse_type(const std::string& s, const std::string& path) {
  if (s == "char" || s == "int8") return PlyType::kChar;
  if (s == "uchar" || s == "uint8") return PlyType::kUChar;
  if (s == "short" || s == "int16") return PlyType::kShort;
  if (s == "ushort" || s == "uint16") return PlyType::kUShort;
  if (s == "int" || s == "int32") return PlyType::kInt;
  if (s == "uint" || s == "uint32") return PlyType::kUInt;
  if (s == "float" || s == "float32") return PlyType::kFloat;
  if (s == "double" || s == "float64") return PlyType::kDouble;
  throw ParseError(path + ": unsupported ply type '" + s + "'");
}

double ply_read_binary_scalar(const unsigned char* p, PlyType t) {
  switch (t) {
    case PlyType::kChar: {
      int8_t v;
      std::memcpy(&v, p, 1);
      return v;
    }
    case PlyType::kUChar: {
      uint8_t v;
      std::memcpy(&v, p, 1);
      return v;
    }
    case PlyType::kShort: {
      int16_t v;
      std::memcpy(&v, p, 2);
      return v;
    }
    case PlyType::kUShort: {
      uint16_t v;
      std::memcpy(&v, p, 2);
      return v;
    }
    case PlyType::kInt: {
      int32_t v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case PlyType::kUInt: {
      uint32_t v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case PlyType::kFloat: {
      float v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case PlyType::kDouble: {
      double v;
      std::memcpy(&v, p, 8);
      return v;
    }
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kDouble;
  bool is_list = false;
  PlyType count_type = PlyType::kUChar;
};

struct PlyElement {
  std::string name;
  size_t count = 0;
  std::vector<PlyProperty> props;
};

// Slot a vertex property feeds: -1 ignore, 0..2 position, 3..5 normal,
// 6 confidence, 7..17 raw channels.
int ply_slot(const std::string& name) {
  if (name == "x") return 0;
  if (name == "y") return 1;
  if (name == "z") return 2;
  if (name == "nx") return 3;
  if (name == "ny") return 4;
  if (name == "nz") return 5;
  if (name == "confidence") return 6;
  if (name.size() >= 2 && name[0] == 'p') {
    int ch = -1;
    try {
      size_t used = 0;
      ch = std::stoi(name.substr(1), &used);
      if (used + 1 != name.size()) return -1;
    } catch (...) {
      return -1;
    }
    if (ch >= 0 && ch < kParamChannels) return 7 + ch;
  }
  return -1;
}

}  // namespace

void write_ply(const IndexedPointCloud& cloud, const std::string& path, bool binary) {
  cloud.validate();
  std::ostringstream h;
  h << "ply\n"
    << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
    << "element vertex " << cloud.size() << "\n"
    << "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_normals) h << "property double nx\nproperty double ny\nproperty double nz\n";
  h << "property double confidence\n";
  for (int c = 0; c < kParamChannels; ++c) h << "property double p" << c << "\n";
  h << "end_header\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << h.str();
  for (size_t i = 0; i < cloud.size(); ++i) {
    std::vector<double> row;
    row.reserve(7 + kParamChannels);
    row.push_back(cloud.positions[i].x);
    row.push_back(cloud.positions[i].y);
    row.push_back(cloud.positions[i].z);
    if (cloud.has_normals) {
      row.push_back(cloud.normals[i].x);
      row.push_back(cloud.normals[i].y);
      row.push_back(cloud.normals[i].z);
    }
    row.push_back(cloud.confidences[i]);
    for (int c = 0; c < kParamChannels; ++c) row.push_back(cloud.params[i][c]);
    if (binary) {
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(double)));
    } else {
      for (size_t k = 0; k < row.size(); ++k)
        out << (k ? " " : "") << fmt_double(row[k]);
      out << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

IndexedPointCloud read_ply(const std::string& path) {
  std::string data = read_text_file(path);
  size_t pos = 0;
  int line_no = 0;
  auto next_line = [&]() -> std::string {
    if (pos >= data.size()) throw ParseError(path + ": unexpected end of header");
    size_t e = data.find('\n', pos);
    if (e == std::string::npos) e = data.size();
    std::string line = data.substr(pos, e - pos);
    pos = e + (e < data.size() ? 1 : 0);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") throw ParseError(path + ": not a ply file");
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    std::string line = next_line();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok.empty() || tok == "comment" || tok == "obj_info") continue;
    if (tok == "format") {
      std::string kind, ver;
      ls >> kind >> ver;
      if (kind == "ascii")
        binary = false;
      else if (kind == "binary_little_endian")
        binary = true;
      else
        throw ParseError(path + " line " + std::to_string(line_no) + ": unsupported format '" +
                         kind + "'");
      have_format = true;
    } else if (tok == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      if (ls.fail())
        throw ParseError(path + " line " + std::to_string(line_no) + ": bad element line");
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty())
        throw ParseError(path + " line " + std::to_string(line_no) + ": property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = ply_parse_type(ct, path);
        p.type = ply_parse_type(it, path);
      } else {
        p.type = ply_parse_type(t, path);
        ls >> p.name;
      }
      if (ls.fail() || p.name.empty())
        throw ParseError(path + " line " + std::to_string(line_no) + ": bad property line");
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      throw ParseError(path + " line " + std::to_string(line_no) + ": unknown header token '" +
                       tok + "'");
    }
  }
  if (!have_format) throw ParseError(path + ": missing format line");

  IndexedPointCloud cloud;
  bool saw_vertex = false;
  for (const PlyElement& el : elements) {
    bool is_vertex = el.name == "vertex" && !saw_vertex;
    std::vector<int> slots;
    bool any_normal = false;
    if (is_vertex) {
      saw_vertex = true;
      for (const PlyProperty& p : el.props) {
        if (p.is_list)
          throw ParseError(path + ": list property '" + p.name + "' on vertex element");
        int s = ply_slot(p.name);
        slots.push_back(s);
        if (s >= 3 && s <= 5) any_normal = true;
      }
      cloud.has_normals = any_normal;
      cloud.resize(el.count);
      for (auto& pv : cloud.params) pv.fill(0.0);
    }

    for (size_t i = 0; i < el.count; ++i) {
      std::vector<double> values;
      if (binary) {
        values.reserve(el.props.size());
        for (const PlyProperty& p : el.props) {
          size_t n_items = 1;
          if (p.is_list) {
            size_t cs = ply_type_size(p.count_type);
            if (pos + cs > data.size()) throw ParseError(path + ": truncated binary data");
            n_items = static_cast<size_t>(ply_read_binary_scalar(
                reinterpret_cast<const unsigned char*>(data.data() + pos), p.count_type));
            pos += cs;
          }
          size_t is = ply_type_size(p.type);
          if (pos + is * n_items > data.size())
            throw ParseError(path + ": truncated binary data");
          if (p.is_list) {
            pos += is * n_items;  // lists are never vertex data; skip
            values.push_back(0.0);
          } else {
            values.push_back(ply_read_binary_scalar(
                reinterpret_cast<const unsigned char*>(data.data() + pos), p.type));
            pos += is;
          }
        }
      } else {
        std::istringstream ls(next_line());
        for (const PlyProperty& p : el.props) {
          if (p.is_list) {
            size_t cnt = 0;
            ls >> cnt;
            double v;
            for (size_t k = 0; k < cnt; ++k) ls >> v;
            values.push_back(0.0);
          } else {
            double v;
            ls >> v;
            values.push_back(v);
          }
        }
        if (ls.fail())
          throw ParseError(path + " line " + std::to_string(line_no) + ": bad " + el.name +
                           " row");
      }

      if (is_vertex) {
        for (size_t k = 0; k < slots.size(); ++k) {
          int s = slots[k];
          double v = values[k];
          if (s < 0) continue;
          if (s < 3)
            cloud.positions[i][s] = v;
          else if (s < 6)
            cloud.normals[i][s - 3] = v;
          else if (s == 6)
            cloud.confidences[i] = v;
          else
            cloud.params[i][s - 7] = v;
        }
      }
    }
  }
  if (!saw_vertex) throw ParseError(path + ": no vertex element");
  cloud.validate();
  return cloud;
}

// ---------------------------------------------------------------------------
// PNG

double srgb_encode(double linear) {
  double v = std::min(1.0, std::max(0.0, linear));
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double srgb_decode(double encoded) {
  double v = std::min(1.0, std::max(0.0, encoded));
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

void write_png(const Image& img, const std::string& path) {
  if (img.width <= 0 || img.height <= 0) throw SizeError("write_png: empty image");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  bool with_alpha = !img.alpha.empty();
  int channels = with_alpha ? 4 : 3;
  std::vector<uint16_t> row(static_cast<size_t>(img.width) * channels);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 16,
               with_alpha ? PNG_COLOR_TYPE_RGB_ALPHA : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);  // 16-bit samples are big-endian in the file
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * channels + c] = static_cast<uint16_t>(
            std::lround(srgb_encode(img.at(x, y, c)) * 65535.0));
      if (with_alpha) {
        double a = std::min(1.0, std::max(0.0, img.alpha[static_cast<size_t>(y) * img.width + x]));
        row[static_cast<size_t>(x) * channels + 3] =
            static_cast<uint16_t>(std::lround(a * 65535.0));
      }
    }
    png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("close failed: " + path);
}

Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<uint16_t> row;
  Image img;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  if (png_get_bit_depth(png, info) < 16) png_set_expand_16(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_swap(png);
  png_read_update_info(png, info);

  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  int channels = png_get_channels(png, info);
  if (channels != 3 && channels != 4) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw ParseError(path + ": unexpected channel count " + std::to_string(channels));
  }
  img = Image(w, h, channels == 4);
  row.resize(static_cast<size_t>(w) * channels);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, reinterpret_cast<png_bytep>(row.data()), nullptr);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = srgb_decode(row[static_cast<size_t>(x) * channels + c] / 65535.0);
      if (channels == 4)
        img.alpha[static_cast<size_t>(y) * w + x] =
            row[static_cast<size_t>(x) * channels + 3] / 65535.0;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[8] = {'K', 'D', 'V', 'R', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

struct ByteWriter {
  std::vector<unsigned char> buf;

  void raw(const void* p, size_t n) {
    size_t o = buf.size();
    buf.resize(o + n);
    std::memcpy(buf.data() + o, p, n);
  }
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void i32(int32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void vec3(const Vec3& v) {
    f64(v.x);
    f64(v.y);
    f64(v.z);
  }
  void f64_array(const std::vector<double>& a) {
    u64(a.size());
    if (!a.empty()) raw(a.data(), a.size() * 8);
  }
};

struct ByteReader {
  const unsigned char* p;
  size_t n, off = 0;
  std::string path;

  void need(size_t k) const {
    if (off + k > n) throw IoError(path + ": checkpoint truncated");
  }
  void raw(void* out, size_t k) {
    need(k);
    std::memcpy(out, p + off, k);
    off += k;
  }
  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  int32_t i32() {
    int32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  Vec3 vec3() {
    Vec3 v;
    v.x = f64();
    v.y = f64();
    v.z = f64();
    return v;
  }
  std::vector<double> f64_array() {
    uint64_t m = u64();
    need(m * 8);
    std::vector<double> a(m);
    if (m) raw(a.data(), m * 8);
    return a;
  }
};

}  // namespace

void save_checkpoint(const SceneModel& model, const std::string& path) {
  model.cloud.validate();
  const size_t n = model.cloud.size();
  ByteWriter w;
  w.raw(kCkptMagic, 8);
  w.u32(kCkptVersion);
  w.u8(model.cloud.has_normals ? 1 : 0);
  w.u8(model.ist.has_value() ? 1 : 0);
  w.u8(model.ist && model.ist->all_identity ? 1 : 0);
  w.u8(0);
  w.u64(n);

  w.i32(model.build_opts.max_depth);
  w.f64(model.build_opts.pad_ratio);
  w.f64(model.build_opts.pad_floor);
  w.i32(model.normal_k);
  w.vec3(model.orient_ref);

  w.vec3(model.lighting.ambient);
  w.u32(static_cast<uint32_t>(model.lighting.directional.size()));
  for (const DirectionalLight& l : model.lighting.directional) {
    w.vec3(l.direction);
    w.vec3(l.color);
  }

  w.i32(model.render.knn);
  w.u32(static_cast<uint32_t>(model.render.samples_per_layer.size()));
  for (int s : model.render.samples_per_layer) w.i32(s);
  w.vec3(model.render.background);
  w.i32(model.render.render_depth);
  w.u8(model.render.ist_enabled ? 1 : 0);

  for (size_t i = 0; i < n; ++i) w.vec3(model.cloud.positions[i]);
  for (size_t i = 0; i < n; ++i) w.f64(model.cloud.confidences[i]);
  for (size_t i = 0; i < n; ++i) w.raw(model.cloud.params[i].data(), kParamChannels * 8);
  if (model.cloud.has_normals)
    for (size_t i = 0; i < n; ++i) w.vec3(model.cloud.normals[i]);
  if (model.ist)
    for (size_t i = 0; i < n; ++i) w.raw(model.ist->ist[i].m.data(), 9 * 8);

  const TrainingState& ts = model.train_state;
  w.u64(ts.step);
  w.u32(ts.epoch);
  w.f64(ts.best_eval);
  w.f64(ts.initial_loss);
  w.u32(ts.plateau);
  w.u32(ts.diverged_epochs);
  w.f64_array(ts.adam_params.m);
  w.f64_array(ts.adam_params.v);
  w.f64_array(ts.adam_log_gamma.m);
  w.f64_array(ts.adam_log_gamma.v);
  w.f64_array(ts.adam_ist.m);
  w.f64_array(ts.adam_ist.v);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(w.buf.data()),
            static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

SceneModel load_checkpoint(const std::string& path) {
  std::string data = read_text_file(path);
  ByteReader r{reinterpret_cast<const unsigned char*>(data.data()), data.size(), 0, path};

  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw FormatVersionError(path + ": not a model checkpoint");
  uint32_t version = r.u32();
  if (version != kCkptVersion)
    throw FormatVersionError(path + ": checkpoint version " + std::to_string(version) +
                             ", expected " + std::to_string(kCkptVersion));
  bool has_normals = r.u8() != 0;
  bool has_ist = r.u8() != 0;
  bool all_identity = r.u8() != 0;
  r.u8();
  uint64_t n = r.u64();

  SceneModel m;
  m.build_opts.max_depth = r.i32();
  m.build_opts.pad_ratio = r.f64();
  m.build_opts.pad_floor = r.f64();
  m.normal_k = r.i32();
  m.orient_ref = r.vec3();

  m.lighting.ambient = r.vec3();
  uint32_t n_lights = r.u32();
  m.lighting.directional.resize(n_lights);
  for (uint32_t i = 0; i < n_lights; ++i) {
    m.lighting.directional[i].direction = r.vec3();
    m.lighting.directional[i].color = r.vec3();
  }

  m.render.knn = r.i32();
  uint32_t n_s = r.u32();
  m.render.samples_per_layer.resize(n_s);
  for (uint32_t i = 0; i < n_s; ++i) m.render.samples_per_layer[i] = r.i32();
  m.render.background = r.vec3();
  m.render.render_depth = r.i32();
  m.render.ist_enabled = r.u8() != 0;

  m.cloud.has_normals = has_normals;
  m.cloud.resize(n);
  for (uint64_t i = 0; i < n; ++i) m.cloud.positions[i] = r.vec3();
  for (uint64_t i = 0; i < n; ++i) m.cloud.confidences[i] = r.f64();
  for (uint64_t i = 0; i < n; ++i) r.raw(m.cloud.params[i].data(), kParamChannels * 8);
  if (has_normals)
    for (uint64_t i = 0; i < n; ++i) m.cloud.normals[i] = r.vec3();
  if (has_ist) {
    IstFrameSet fs;
    fs.ist.resize(n);
    for (uint64_t i = 0; i < n; ++i) r.raw(fs.ist[i].m.data(), 9 * 8);
    fs.all_identity = all_identity;
    m.ist = std::move(fs);
  }

  TrainingState& ts = m.train_state;
  ts.step = r.u64();
  ts.epoch = r.u32();
  ts.best_eval = r.f64();
  ts.initial_loss = r.f64();
  ts.plateau = r.u32();
  ts.diverged_epochs = r.u32();
  ts.adam_params.m = r.f64_array();
  ts.adam_params.v = r.f64_array();
  ts.adam_log_gamma.m = r.f64_array();
  ts.adam_log_gamma.v = r.f64_array();
  ts.adam_ist.m = r.f64_array();
  ts.adam_ist.v = r.f64_array();

  m.cloud.validate();
  return m;
}

// ---------------------------------------------------------------------------
// JSON configs

namespace {

Vec3 json_vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Camera camera_from_json(const json& j) {
  Camera c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  const json& rot = j.at("rot");
  if (!rot.is_array() || rot.size() != 9)
    throw ParseError("camera rot must be 9 row-major entries");
  for (int i = 0; i < 9; ++i) c.rot.m[i] = rot[i].get<double>();
  c.pos = json_vec3(j.at("pos"));
  if (c.width <= 0 || c.height <= 0) throw ParseError("camera size must be positive");
  return c;
}

json camera_to_json(const Camera& c) {
  json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["rot"] = c.rot.m;
  j["pos"] = vec3_json(c.pos);
  return j;
}

}  // namespace

SceneConfig read_scene_config(const std::string& path) {
  SceneConfig cfg;
  try {
    json j = json::parse(read_text_file(path));
    cfg.background = json_vec3(j.at("background"));
    const json& jl = j.at("lighting");
    cfg.lighting.ambient = json_vec3(jl.at("ambient"));
    for (const json& d : jl.value("directional", json::array())) {
      DirectionalLight l;
      l.direction = normalized(json_vec3(d.at("direction")));
      l.color = json_vec3(d.at("color"));
      cfg.lighting.directional.push_back(l);
    }
    if (j.contains("orient_ref")) cfg.orient_ref = json_vec3(j["orient_ref"]);
    cfg.cloud = j.value("cloud", std::string{});
    for (const json& jv : j.at("views")) {
      ViewConfig v;
      v.name = jv.at("name").get<std::string>();
      v.image = jv.at("image").get<std::string>();
      v.mask = jv.value("mask", std::string{});
      std::string split = jv.value("split", std::string{"train"});
      if (split != "train" && split != "test")
        throw ParseError("view split must be 'train' or 'test', got '" + split + "'");
      v.is_test = split == "test";
      v.camera = camera_from_json(jv.at("camera"));
      cfg.views.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
  return cfg;
}

void write_scene_config(const SceneConfig& cfg, const std::string& path) {
  json j;
  j["background"] = vec3_json(cfg.background);
  j["lighting"]["ambient"] = vec3_json(cfg.lighting.ambient);
  json dirs = json::array();
  for (const DirectionalLight& l : cfg.lighting.directional) {
    json d;
    d["direction"] = vec3_json(l.direction);
    d["color"] = vec3_json(l.color);
    dirs.push_back(d);
  }
  j["lighting"]["directional"] = dirs;
  if (cfg.orient_ref) j["orient_ref"] = vec3_json(*cfg.orient_ref);
  if (!cfg.cloud.empty()) j["cloud"] = cfg.cloud;
  json views = json::array();
  for (const ViewConfig& v : cfg.views) {
    json jv;
    jv["name"] = v.name;
    jv["image"] = v.image;
    if (!v.mask.empty()) jv["mask"] = v.mask;
    jv["split"] = v.is_test ? "test" : "train";
    jv["camera"] = camera_to_json(v.camera);
    views.push_back(jv);
  }
  j["views"] = views;
  write_text_file(path, j.dump(2) + "\n");
}

Dataset load_dataset(const SceneConfig& cfg, const std::string& config_path) {
  std::filesystem::path base = std::filesystem::path(config_path).parent_path();
  Dataset ds;
  for (const ViewConfig& vc : cfg.views) {
    View v;
    v.name = vc.name;
    v.camera = vc.camera;
    v.is_test = vc.is_test;
    v.image = read_png((base / vc.image).string());
    if (v.image.width != vc.camera.width || v.image.height != vc.camera.height)
      throw SizeError("view " + vc.name + ": image is " + std::to_string(v.image.width) + "x" +
                      std::to_string(v.image.height) + " but camera expects " +
                      std::to_string(vc.camera.width) + "x" + std::to_string(vc.camera.height));
    if (!vc.mask.empty()) {
      v.mask = read_png((base / vc.mask).string());
      if (v.mask.width != vc.camera.width || v.mask.height != vc.camera.height)
        throw SizeError("view " + vc.name + ": mask size mismatch");
    }
    ds.views.push_back(std::move(v));
  }
  return ds;
}

TrainConfig read_train_config(const std::string& path, const TrainConfig& base) {
  TrainConfig cfg = base;
  try {
    json j = json::parse(read_text_file(path));
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.batch_rays = j.value("batch_rays", cfg.batch_rays);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.warmup_epochs = j.value("warmup_epochs", cfg.warmup_epochs);
    cfg.pg_enabled = j.value("pg_enabled", cfg.pg_enabled);
    cfg.pg_last_epoch = j.value("pg_last_epoch", cfg.pg_last_epoch);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.plateau_rel = j.value("plateau_rel", cfg.plateau_rel);
    cfg.divergence_factor = j.value("divergence_factor", cfg.divergence_factor);
    cfg.lambda_orient = j.value("lambda_orient", cfg.lambda_orient);
    cfg.gamma_floor = j.value("gamma_floor", cfg.gamma_floor);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.eval_rays = j.value("eval_rays", cfg.eval_rays);
    cfg.verbose = j.value("verbose", cfg.verbose);
    if (j.contains("cloud_ops")) {
      const json& c = j["cloud_ops"];
      cfg.cloud_ops.prune_threshold = c.value("prune_threshold", cfg.cloud_ops.prune_threshold);
      cfg.cloud_ops.denoise_k = c.value("denoise_k", cfg.cloud_ops.denoise_k);
      cfg.cloud_ops.denoise_std_ratio =
          c.value("denoise_std_ratio", cfg.cloud_ops.denoise_std_ratio);
      cfg.cloud_ops.grow_enabled = c.value("grow_enabled", cfg.cloud_ops.grow_enabled);
      cfg.cloud_ops.grow_confidence = c.value("grow_confidence", cfg.cloud_ops.grow_confidence);
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Shape edits

ShapeEdit read_shape_edit(const std::string& path) {
  std::string data = read_text_file(path);
  ShapeEdit edit;
  std::istringstream in(data);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;  // blank or comment-only
    ShapeEdit::Target t;
    if (first == "DELETE") {
      std::string extra;
      if (ls >> extra)
        throw ParseError(path + " line " + std::to_string(line_no) +
                         ": DELETE takes no arguments");
      t.deleted = true;
    } else {
      std::istringstream vs(line);
      double x, y, z;
      if (!(vs >> x >> y >> z))
        throw ParseError(path + " line " + std::to_string(line_no) +
                         ": expected 'x y z' or 'DELETE'");
      std::string extra;
      if (vs >> extra)
        throw ParseError(path + " line " + std::to_string(line_no) +
                         ": expected exactly 3 coordinates");
      t.q = {x, y, z};
    }
    edit.targets.push_back(t);
  }
  if (edit.targets.empty()) throw ParseError(path + ": no edit records");
  return edit;
}

void write_shape_edit(const ShapeEdit& edit, const std::string& path) {
  std::ostringstream out;
  for (const ShapeEdit::Target& t : edit.targets) {
    if (t.deleted)
      out << "DELETE\n";
    else
      out << fmt_double(t.q.x) << " " << fmt_double(t.q.y) << " " << fmt_double(t.q.z) << "\n";
  }
  write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Matchings

std::vector<uint32_t> read_matching(const std::string& path) {
  std::string data = read_text_file(path);
  std::istringstream in(data);
  std::string line;
  int line_no = 0;
  std::vector<std::pair<uint64_t, uint64_t>> pairs;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    uint64_t a, b;
    if (!(ls >> a)) continue;
    if (!(ls >> b))
      throw ParseError(path + " line " + std::to_string(line_no) + ": expected 'a b'");
    std::string extra;
    if (ls >> extra)
      throw ParseError(path + " line " + std::to_string(line_no) + ": expected exactly 2 fields");
    pairs.emplace_back(a, b);
  }
  size_t n = pairs.size();
  if (n == 0) throw ParseError(path + ": empty matching");
  std::vector<uint32_t> match(n, 0);
  std::vector<uint8_t> seen_a(n, 0), seen_b(n, 0);
  for (const auto& [a, b] : pairs) {
    if (a >= n || b >= n)
      throw ParseError(path + ": index " + std::to_string(std::max(a, b)) +
                       " out of range for " + std::to_string(n) + " pairs");
    if (seen_a[a]++ || seen_b[b]++)
      throw ParseError(path + ": matching is not a bijection");
    match[a] = static_cast<uint32_t>(b);
  }
  return match;
}

void write_matching(const std::vector<uint32_t>& match, const std::string& path) {
  std::ostringstream out;
  for (size_t a = 0; a < match.size(); ++a) out << a << " " << match[a] << "\n";
  write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Metric tables

void write_metric_table(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "name\tpsnr\tssim\n";
  char buf[128];
  double sp = 0, ss = 0;
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.6f\n", r.name.c_str(), r.psnr, r.ssim);
    out << buf;
    sp += r.psnr;
    ss += r.ssim;
  }
  if (!rows.empty()) {
    std::snprintf(buf, sizeof(buf), "mean\t%.4f\t%.6f\n", sp / rows.size(), ss / rows.size());
    out << buf;
  }
  write_text_file(path, out.str());
}

}  // namespace kdvr
