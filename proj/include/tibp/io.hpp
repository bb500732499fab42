#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tibp/model.hpp"
#include "tibp/synth.hpp"

namespace tibp {

namespace fs = std::filesystem;

// Binary PGM (P5) / PPM (P6), 8 or 16 bit. Values are scaled to [0, 1].
Image read_pnm(const fs::path& path);
// Writes P5 for one channel, P6 for three; values are clamped to [0, 1].
void write_pnm(const fs::path& path, const Image& image);

// Box-filter downscale by integer factors.
Image box_resize(const Image& image, int height, int width);

struct LoadOptions {
  int resize_h = 0;  // 0 keeps the native size
  int resize_w = 0;
  bool normalize = true;
};

// Every .pgm/.ppm/.pnm file in `dir`, sorted by filename.
std::vector<fs::path> list_images(const fs::path& dir);
Dataset load_image_directory(const fs::path& dir, const LoadOptions& options = {});
// Writes image_0000.ppm ... from raw [0, 1] values.
void write_image_directory(const fs::path& dir, const Dataset& raw);

// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& contents);

void write_truth_manifest(const fs::path& path, const GroundTruth& truth);
GroundTruth read_truth_manifest(const fs::path& path);

constexpr std::uint32_t kCheckpointVersion = 1;

// Self-describing binary container of named little-endian arrays holding the
// whole state, including the training images and the RNG position.
std::string serialize_checkpoint(const ModelState& state);
ModelState deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const ModelState& state, const fs::path& path);
ModelState load_checkpoint(const fs::path& path);

struct RunConfig {
  Variant variant = Variant::lg_tibp;
  int canvas_h = 0;  // 0 means image size
  int canvas_w = 0;
  std::vector<double> rotations{0.0, 1.5707963267948966, 3.141592653589793, 4.71238898038469};
  std::vector<double> scales{1.0};
  Hyperparameters hyper;
  int iterations = 100;
  std::uint64_t seed = 1;
  double proposal_temperature = 1.0;
  std::string data_dir;
  bool normalize = true;
  int resize_h = 0;
  int resize_w = 0;
  int warm_start_features = 0;
  int hyper_burnin = 0;

  ModelConfig model_config() const;
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const fs::path& path);
std::string format_run_config(const RunConfig& config);

// Comma-separated reals; accepts "pi", "pi/2", "3pi/2" style angle tokens.
std::vector<double> parse_real_list(const std::string& text);
std::vector<int> parse_int_list(const std::string& text);

void write_trace_header(std::ostream& out);
struct SweepReport;
void write_trace_row(std::ostream& out, const SweepReport& report, const ModelState& state);

}  // namespace tibp
