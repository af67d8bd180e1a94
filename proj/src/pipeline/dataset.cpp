#include "mvnet/pipeline/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mvnet/binary_io.hpp"
#include "mvnet/error.hpp"

namespace mvnet::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Parses "<magic> w h [maxval]" plus the single whitespace byte before the
// raster; '#' comments are skipped.
struct NetpbmHeader {
  std::string magic;
  int width = 0, height = 0;
  double scale = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_header(const std::vector<std::uint8_t>& bytes, int fields, const std::string& path) {
  NetpbmHeader h;
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(char(bytes[pos++]));
    if (t.empty()) fail(ErrorCode::kTruncated, path + ": incomplete header");
    return t;
  };
  h.magic = token();
  try {
    h.width = std::stoi(token());
    h.height = std::stoi(token());
    if (fields > 2) h.scale = std::stod(token());
  } catch (const std::logic_error&) {
    fail(ErrorCode::kInvalidInput, path + ": malformed header");
  }
  if (h.width <= 0 || h.height <= 0) fail(ErrorCode::kInvalidInput, path + ": bad dimensions");
  h.data_offset = pos + 1;
  return h;
}

std::vector<std::uint8_t> header_bytes(const std::string& text) { return {text.begin(), text.end()}; }

void write_raster(const std::string& path, const std::string& header, const std::vector<std::uint8_t>& raster) {
  std::vector<std::uint8_t> out = header_bytes(header);
  out.insert(out.end(), raster.begin(), raster.end());
  io::write_file(path, out);
}

const std::uint8_t* raster(const std::vector<std::uint8_t>& bytes, const NetpbmHeader& h, std::size_t n,
                           const std::string& path) {
  if (h.data_offset + n > bytes.size()) fail(ErrorCode::kTruncated, path + ": raster is short");
  return bytes.data() + h.data_offset;
}

void expect_size(std::size_t got, std::size_t want, const std::string& what) {
  if (got != want) fail(ErrorCode::kShapeMismatch, what + ": buffer size does not match the resolution");
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

json frame_entry(const RgbdFrame& f, const std::string& id) {
  const auto& k = f.intrinsics;
  const auto& e = f.extrinsics;
  std::vector<double> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r[i * 3 + j] = e.rotation(i, j);
    t[i] = e.translation[i];
  }
  json j = {{"id", id},
            {"intrinsics", {{"fx", k.fx}, {"fy", k.fy}, {"skew", k.skew}, {"cx", k.cx}, {"cy", k.cy}}},
            {"extrinsics", {{"R", r}, {"T", t}}},
            {"rgb", "rgb_" + id + ".ppm"},
            {"depth", "depth_" + id + ".pfm"},
            {"valid", "valid_" + id + ".pbm"}};
  if (!f.labels.empty()) j["labels"] = "labels_" + id + ".pgm";
  return j;
}

// Manifest id of a frame: the part after the last '/'.
std::string local_id(const std::string& frame_id) {
  const auto slash = frame_id.rfind('/');
  return slash == std::string::npos ? frame_id : frame_id.substr(slash + 1);
}

}  // namespace

bool Scene::labeled() const {
  return !frames.empty() && std::all_of(frames.begin(), frames.end(), [](const RgbdFrame& f) { return !f.labels.empty(); });
}

std::size_t Dataset::frame_count() const {
  std::size_t n = 0;
  for (const auto& s : scenes) n += s.frames.size();
  return n;
}

void write_ppm(const std::string& path, int width, int height, const std::vector<float>& rgb) {
  expect_size(rgb.size(), std::size_t(width) * height * 3, path);
  std::vector<std::uint8_t> data(rgb.size());
  std::transform(rgb.begin(), rgb.end(), data.begin(), to_byte);
  write_raster(path, "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n", data);
}

std::vector<float> read_ppm(const std::string& path, int& width, int& height) {
  const auto bytes = io::read_file(path);
  const auto h = parse_header(bytes, 3, path);
  if (h.magic != "P6") fail(ErrorCode::kBadMagic, path + ": not a binary PPM");
  if (h.scale != 255) fail(ErrorCode::kInvalidInput, path + ": only 8-bit PPM is supported");
  width = h.width;
  height = h.height;
  const std::size_t n = std::size_t(width) * height * 3;
  const std::uint8_t* p = raster(bytes, h, n, path);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = float(p[i]) / 255.0f;
  return out;
}

void write_pfm(const std::string& path, int width, int height, const std::vector<float>& values) {
  expect_size(values.size(), std::size_t(width) * height, path);
  io::Writer w;
  const std::string header = "Pf\n" + std::to_string(width) + " " + std::to_string(height) + "\n-1.0\n";
  w.bytes(header.data(), header.size());
  // PFM stores rows bottom to top.
  for (int row = height - 1; row >= 0; --row)
    w.f32s(std::span<const float>(values.data() + std::size_t(row) * width, std::size_t(width)));
  io::write_file(path, w.buffer());
}

std::vector<float> read_pfm(const std::string& path, int& width, int& height) {
  const auto bytes = io::read_file(path);
  const auto h = parse_header(bytes, 3, path);
  if (h.magic != "Pf") fail(ErrorCode::kBadMagic, path + ": not a grayscale PFM");
  if (h.scale == 0) fail(ErrorCode::kInvalidInput, path + ": PFM scale must be nonzero");
  width = h.width;
  height = h.height;
  const std::size_t n = std::size_t(width) * height;
  const std::uint8_t* p = raster(bytes, h, n * 4, path);
  const bool big_endian = h.scale > 0;
  std::vector<float> out(n);
  for (int row = 0; row < height; ++row) {
    const std::uint8_t* src = p + std::size_t(height - 1 - row) * width * 4;
    for (int col = 0; col < width; ++col) {
      std::uint8_t b[4];
      std::memcpy(b, src + std::size_t(col) * 4, 4);
      if (big_endian) std::reverse(b, b + 4);
      std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                           std::uint32_t(b[3]) << 24;
      out[std::size_t(row) * width + col] = std::bit_cast<float>(bits);
    }
  }
  return out;
}

void write_pbm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& bits) {
  expect_size(bits.size(), std::size_t(width) * height, path);
  const std::size_t stride = (std::size_t(width) + 7) / 8;
  std::vector<std::uint8_t> data(stride * height, 0);
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col)
      if (bits[std::size_t(row) * width + col]) data[row * stride + col / 8] |= std::uint8_t(0x80u >> (col % 8));
  write_raster(path, "P4\n" + std::to_string(width) + " " + std::to_string(height) + "\n", data);
}

std::vector<std::uint8_t> read_pbm(const std::string& path, int& width, int& height) {
  const auto bytes = io::read_file(path);
  const auto h = parse_header(bytes, 2, path);
  if (h.magic != "P4") fail(ErrorCode::kBadMagic, path + ": not a binary PBM");
  width = h.width;
  height = h.height;
  const std::size_t stride = (std::size_t(width) + 7) / 8;
  const std::uint8_t* p = raster(bytes, h, stride * height, path);
  std::vector<std::uint8_t> out(std::size_t(width) * height);
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col)
      out[std::size_t(row) * width + col] = (p[row * stride + col / 8] >> (7 - col % 8)) & 1u;
  return out;
}

void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& values) {
  expect_size(values.size(), std::size_t(width) * height, path);
  write_raster(path, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n", values);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& width, int& height) {
  const auto bytes = io::read_file(path);
  const auto h = parse_header(bytes, 3, path);
  if (h.magic != "P5") fail(ErrorCode::kBadMagic, path + ": not a binary PGM");
  if (h.scale != 255) fail(ErrorCode::kInvalidInput, path + ": only 8-bit PGM is supported");
  width = h.width;
  height = h.height;
  const std::size_t n = std::size_t(width) * height;
  const std::uint8_t* p = raster(bytes, h, n, path);
  return {p, p + n};
}

Dataset synthetic_dataset(std::uint64_t seed, int scenes, int frames_per_scene, int height, int width, int objects,
                          const WarningSink& warn) {
  if (scenes < 1) fail(ErrorCode::kInvalidInput, "a dataset needs at least one scene");
  Dataset data;
  for (int i = 0; i < scenes; ++i) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(i)};
    std::mt19937_64 rng(seq);
    SceneSpec spec = random_scene_spec(rng(), frames_per_scene, height, width, objects);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", i);
    spec.name = name;
    data.scenes.push_back({spec.name, generate_scene(spec, warn)});
  }
  return data;
}

void save_scene(const std::string& dir, const Scene& scene) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
  json frames = json::array();
  for (const auto& f : scene.frames) {
    f.validate();
    const std::string id = local_id(f.frame_id);
    const json entry = frame_entry(f, id);
    const fs::path base(dir);
    write_ppm((base / entry["rgb"].get<std::string>()).string(), f.width(), f.height(), f.rgb);
    write_pfm((base / entry["depth"].get<std::string>()).string(), f.width(), f.height(), f.depth);
    write_pbm((base / entry["valid"].get<std::string>()).string(), f.width(), f.height(), f.valid);
    if (!f.labels.empty())
      write_pgm((base / entry["labels"].get<std::string>()).string(), f.width(), f.height(), f.labels);
    frames.push_back(entry);
  }
  const json manifest = {{"scene", scene.name}, {"frames", frames}};
  const std::string text = manifest.dump(2) + "\n";
  io::write_file((fs::path(dir) / "manifest.json").string(),
                 std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Scene load_scene(const std::string& dir) {
  const fs::path base(dir);
  const auto bytes = io::read_file((base / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidInput, dir + "/manifest.json: " + e.what());
  }
  Scene scene;
  try {
    scene.name = manifest.value("scene", base.filename().string());
    for (const auto& entry : manifest.at("frames")) {
      RgbdFrame f;
      f.frame_id = scene.name + "/" + entry.at("id").get<std::string>();
      const auto& k = entry.at("intrinsics");
      f.intrinsics.fx = k.at("fx");
      f.intrinsics.fy = k.at("fy");
      f.intrinsics.skew = k.value("skew", 0.0);
      f.intrinsics.cx = k.at("cx");
      f.intrinsics.cy = k.at("cy");
      const auto r = entry.at("extrinsics").at("R").get<std::vector<double>>();
      const auto t = entry.at("extrinsics").at("T").get<std::vector<double>>();
      if (r.size() != 9 || t.size() != 3) fail(ErrorCode::kInvalidInput, f.frame_id + ": R needs 9 values, T 3");
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) f.extrinsics.rotation(i, j) = r[i * 3 + j];
        f.extrinsics.translation[i] = t[i];
      }
      int w = 0, h = 0, w2 = 0, h2 = 0;
      f.rgb = read_ppm((base / entry.at("rgb").get<std::string>()).string(), w, h);
      f.depth = read_pfm((base / entry.at("depth").get<std::string>()).string(), w2, h2);
      if (w2 != w || h2 != h) fail(ErrorCode::kShapeMismatch, f.frame_id + ": depth resolution differs from rgb");
      f.valid = read_pbm((base / entry.at("valid").get<std::string>()).string(), w2, h2);
      if (w2 != w || h2 != h) fail(ErrorCode::kShapeMismatch, f.frame_id + ": validity resolution differs from rgb");
      if (entry.contains("labels")) {
        f.labels = read_pgm((base / entry.at("labels").get<std::string>()).string(), w2, h2);
        if (w2 != w || h2 != h) fail(ErrorCode::kShapeMismatch, f.frame_id + ": label resolution differs from rgb");
      }
      f.intrinsics.width = w;
      f.intrinsics.height = h;
      f.validate();
      scene.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidInput, dir + "/manifest.json: " + e.what());
  }
  return scene;
}

Dataset load_dataset(const std::string& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) fail(ErrorCode::kIo, root + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root, ec))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
  if (ec) fail(ErrorCode::kIo, "cannot list " + root + ": " + ec.message());
  std::sort(dirs.begin(), dirs.end());
  Dataset data;
  for (const auto& d : dirs) data.scenes.push_back(load_scene(d.string()));
  if (data.scenes.empty()) fail(ErrorCode::kInvalidInput, root + " contains no scene directories");
  return data;
}

}  // namespace mvnet::pipeline
