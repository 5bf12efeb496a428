#include "mefa/encoders/image.hpp"

#include "mefa/errors.hpp"
#include "mefa/io/binary.hpp"

namespace mefa {

namespace {
constexpr char kImageMagic[] = "MEFAIMG1";
constexpr std::uint32_t kImageVersion = 1;
}  // namespace

void validate_image(const ImageGrid& img, std::size_t patch) {
  if (patch == 0 || img.height == 0 || img.width == 0 || img.height % patch != 0 || img.width % patch != 0) {
    throw DimensionError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is not divisible into " + std::to_string(patch) + "x" +
                         std::to_string(patch) + " patches");
  }
  if (img.values.size() != img.height * img.width * img.channels) {
    throw DimensionError("image value count does not match its dimensions");
  }
  for (float v : img.values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InputError("image values must lie in [0,1]");
  }
}

std::vector<float> patchify(const ImageGrid& img, std::size_t patch) {
  validate_image(img, patch);
  const std::size_t ph = img.height / patch, pw = img.width / patch;
  const std::size_t row_len = patch * patch * img.channels;
  std::vector<float> out(ph * pw * row_len);
  std::size_t p = 0;
  for (std::size_t by = 0; by < ph; ++by) {
    for (std::size_t bx = 0; bx < pw; ++bx, ++p) {
      float* dst = out.data() + p * row_len;
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < img.channels; ++c) *dst++ = img.at(by * patch + y, bx * patch + x, c);
    }
  }
  return out;
}

void save_images(const std::string& path, const std::vector<ImageGrid>& images) {
  io::ByteWriter w;
  w.bytes(std::string_view(kImageMagic, 8));
  w.u32(kImageVersion);
  w.u32(static_cast<std::uint32_t>(images.size()));
  const std::size_t h = images.empty() ? 0 : images[0].height;
  const std::size_t wd = images.empty() ? 0 : images[0].width;
  const std::size_t c = images.empty() ? 0 : images[0].channels;
  w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(wd));
  w.u32(static_cast<std::uint32_t>(c));
  for (const auto& img : images) {
    if (img.height != h || img.width != wd || img.channels != c) {
      throw DimensionError("all images in an archive must share dimensions");
    }
    w.u32(img.identity_id);
    for (float v : img.values) w.f32(v);
  }
  io::write_file(path, w.buffer());
}

std::vector<ImageGrid> load_images(const std::string& path) {
  io::ByteReader r(io::read_file(path));
  if (r.bytes(8, "magic") != std::string_view(kImageMagic, 8)) throw FormatError("bad image archive magic", 0);
  const std::size_t vpos = r.offset();
  if (r.u32("version") != kImageVersion) throw FormatError("unsupported image archive version", vpos);
  const std::uint32_t count = r.u32("count");
  const std::uint32_t h = r.u32("height"), w = r.u32("width"), c = r.u32("channels");
  std::vector<ImageGrid> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageGrid img(h, w, c, r.u32("identity_id"));
    for (auto& v : img.values) v = r.f32("pixel values");
    out.push_back(std::move(img));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after image archive", r.offset());
  return out;
}

}  // namespace mefa
