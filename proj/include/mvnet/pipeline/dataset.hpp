#pragma once

#include <string>
#include <vector>

#include "mvnet/geometry.hpp"
#include "mvnet/pipeline/scene.hpp"

namespace mvnet::pipeline {

// One scene directory: manifest.json plus per-frame rgb_<id>.ppm (P6),
// depth_<id>.pfm, valid_<id>.pbm (P4, set bit = valid) and, when labeled,
// labels_<id>.pgm (P5).
struct Scene {
  std::string name;
  std::vector<RgbdFrame> frames;

  bool labeled() const;
};

struct Dataset {
  std::vector<Scene> scenes;

  std::size_t frame_count() const;
};

// `scenes` random rooms; scene i is drawn from a seed derived from (seed, i)
// and named scene_000, scene_001, ...
Dataset synthetic_dataset(std::uint64_t seed, int scenes, int frames_per_scene, int height = 32, int width = 32,
                          int objects = 3, const WarningSink& warn = {});

void save_scene(const std::string& dir, const Scene& scene);
// Frame ids are "<scene name>/<manifest id>".
Scene load_scene(const std::string& dir);

// Every immediate subdirectory holding a manifest.json, in name order.
Dataset load_dataset(const std::string& root);

// Netpbm / PFM codecs on raw buffers.
void write_ppm(const std::string& path, int width, int height, const std::vector<float>& rgb);
std::vector<float> read_ppm(const std::string& path, int& width, int& height);
void write_pfm(const std::string& path, int width, int height, const std::vector<float>& values);
std::vector<float> read_pfm(const std::string& path, int& width, int& height);
void write_pbm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> read_pbm(const std::string& path, int& width, int& height);
void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& values);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& width, int& height);

}  // namespace mvnet::pipeline
