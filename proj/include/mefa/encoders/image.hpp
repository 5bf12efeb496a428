#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mefa {

/// H×W×C image with values in [0,1], stored row-major with channels innermost.
struct ImageGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> values;
  std::uint32_t identity_id = 0;

  ImageGrid() = default;
  ImageGrid(std::size_t h, std::size_t w, std::size_t c, std::uint32_t id)
      : height(h), width(w), channels(c), values(h * w * c, 0.0f), identity_id(id) {}

  float& at(std::size_t y, std::size_t x, std::size_t ch) { return values[(y * width + x) * channels + ch]; }
  float at(std::size_t y, std::size_t x, std::size_t ch) const { return values[(y * width + x) * channels + ch]; }

  bool operator==(const ImageGrid&) const = default;
};

/// Throws InputError unless H and W are divisible by the patch size and all
/// values lie in [0,1].
void validate_image(const ImageGrid& img, std::size_t patch);

/// Non-overlapping P×P patches in raster order, each flattened (row, col,
/// channel) into one row of the returned [n × P·P·C] matrix.
std::vector<float> patchify(const ImageGrid& img, std::size_t patch);

/// Image archive: magic "MEFAIMG1", u32 {version=1, count, H, W, C}, then per
/// image u32 identity_id followed by f32 values[H·W·C]; all little-endian.
void save_images(const std::string& path, const std::vector<ImageGrid>& images);
std::vector<ImageGrid> load_images(const std::string& path);

}  // namespace mefa
