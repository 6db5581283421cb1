#include "asl/image.hpp"

#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <string>

#ifdef ASL_HAVE_PNG
#include <png.h>
#endif
#ifdef ASL_HAVE_JPEG
#include <cstdio>
#include <jpeglib.h>
#endif

namespace asl {

GrayImage::GrayImage(std::size_t w, std::size_t h, std::uint8_t fill) : width(w), height(h), pixels(w * h, fill) {
  if (w == 0 || h == 0) throw ParameterError("image dimensions must be positive");
}

GrayImage::GrayImage(std::size_t w, std::size_t h, std::vector<std::uint8_t> px)
    : width(w), height(h), pixels(std::move(px)) {
  if (w == 0 || h == 0) throw ParameterError("image dimensions must be positive");
  if (pixels.size() != w * h) {
    throw ShapeError(std::to_string(pixels.size()) + " pixels for a " + std::to_string(w) + "x" + std::to_string(h) +
                     " image");
  }
}

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class PgmHeader {
 public:
  explicit PgmHeader(std::span<const std::uint8_t> b) : b_(b) {}

  /// Skips whitespace and comments, then reads a decimal field.
  std::size_t field(const char* name) {
    for (;;) {
      while (pos_ < b_.size() && is_space(b_[pos_])) ++pos_;
      if (pos_ < b_.size() && b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    if (pos_ >= b_.size()) throw FormatError(std::string("PGM header ends before ") + name, pos_);
    start_ = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1u << 30)) throw FormatError(std::string("PGM ") + name + " is too large", start_);
      ++pos_;
    }
    if (pos_ == start_) throw FormatError(std::string("PGM ") + name + " is not a number", start_);
    return v;
  }

  std::size_t start() const { return start_; }
  std::size_t& pos() { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
  std::size_t start_ = 0;
};

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (expected P5)", 0);
  PgmHeader h(bytes);
  const std::size_t w = h.field("width");
  if (w == 0) throw FormatError("PGM width must be positive", h.start());
  const std::size_t ht = h.field("height");
  if (ht == 0) throw FormatError("PGM height must be positive", h.start());
  const std::size_t maxval = h.field("maxval");
  if (maxval != 255) throw FormatError("PGM maxval " + std::to_string(maxval) + " unsupported (need 255)", h.start());
  std::size_t& pos = h.pos();
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw FormatError("PGM header not terminated", pos);
  ++pos;
  const std::size_t need = w * ht;
  if (bytes.size() - pos < need) {
    throw FormatError("PGM payload truncated: " + std::to_string(bytes.size() - pos) + " of " + std::to_string(need) +
                          " bytes",
                      bytes.size());
  }
  return GrayImage(w, ht, std::vector<std::uint8_t>(bytes.begin() + pos, bytes.begin() + pos + need));
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

bool external_codecs_available() {
#if defined(ASL_HAVE_PNG) && defined(ASL_HAVE_JPEG)
  return true;
#else
  return false;
#endif
}

namespace {

#ifdef ASL_HAVE_PNG
GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG: ") + image.message, 0);
  }
  image.format = PNG_FORMAT_GRAY;
  if (image.width == 0 || image.height == 0) {
    png_image_free(&image);
    throw FormatError("PNG has an empty raster", 0);
  }
  GrayImage img(image.width, image.height);
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("PNG: " + msg, 0);
  }
  return img;
}
#endif

#ifdef ASL_HAVE_JPEG
struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

GrayImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  // Everything that must survive the longjmp lives outside this scope.
  std::vector<std::uint8_t> pixels;
  std::size_t w = 0, h = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError(std::string("JPEG: ") + err.message, 0);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  w = cinfo.output_width;
  h = cinfo.output_height;
  pixels.resize(w * h);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + cinfo.output_scanline * w;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return GrayImage(w, h, std::move(pixels));
}
#endif

}  // namespace

GrayImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
#ifdef ASL_HAVE_PNG
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
    return decode_png(bytes);
  }
#endif
#ifdef ASL_HAVE_JPEG
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes);
#endif
  throw FormatError("unrecognised image format", 0);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

GrayImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

namespace {

/// Bilinear sample of a row-major plane at real coordinates already clamped
/// to [0, w-1] x [0, h-1].
template <typename Get>
double bilinear(Get&& get, std::size_t w, std::size_t h, double xs, double ys) {
  const auto x0 = static_cast<std::size_t>(xs);
  const auto y0 = static_cast<std::size_t>(ys);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const double fx = xs - static_cast<double>(x0);
  const double fy = ys - static_cast<double>(y0);
  const double top = (1.0 - fx) * get(x0, y0) + fx * get(x1, y0);
  const double bottom = (1.0 - fx) * get(x0, y1) + fx * get(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

double clamp_coord(double v, double hi) { return std::clamp(v, 0.0, hi); }

}  // namespace

Tensor<float> preprocess_image(const GrayImage& img, std::size_t target, double crop_fraction) {
  if (target == 0) throw ParameterError("target side must be positive");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) throw ParameterError("center crop fraction must lie in (0, 1]");
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
    throw ParameterError("image is empty or inconsistent");
  }
  const auto crop_side = [&](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * crop_fraction + 0.5)));
  };
  const std::size_t cw = crop_side(img.width);
  const std::size_t ch = crop_side(img.height);
  const std::size_t ox = (img.width - cw) / 2;
  const std::size_t oy = (img.height - ch) / 2;
  auto get = [&](std::size_t x, std::size_t y) { return static_cast<double>(img.at(ox + x, oy + y)); };

  Tensor<float> out({1, target, target});
  const double sx = static_cast<double>(cw) / static_cast<double>(target);
  const double sy = static_cast<double>(ch) / static_cast<double>(target);
  for (std::size_t y = 0; y < target; ++y) {
    const double ys = clamp_coord((y + 0.5) * sy - 0.5, static_cast<double>(ch - 1));
    for (std::size_t x = 0; x < target; ++x) {
      const double xs = clamp_coord((x + 0.5) * sx - 0.5, static_cast<double>(cw - 1));
      out[y * target + x] = static_cast<float>(bilinear(get, cw, ch, xs, ys) / 255.0);
    }
  }
  return out;
}

AugmentPolicy parse_augment(std::string_view name) {
  if (name == "none") return AugmentPolicy::none;
  if (name == "crop-jitter") return AugmentPolicy::crop_jitter;
  throw ParameterError("unknown augmentation policy '" + std::string(name) + "' (none, crop-jitter)");
}

std::string_view to_string(AugmentPolicy p) { return p == AugmentPolicy::none ? "none" : "crop-jitter"; }

Tensor<float> crop_resize(const Tensor<float>& x, double area_fraction, double offset_x, double offset_y) {
  if (x.rank() != 3) throw ShapeError("crop_resize expects [C, H, W], got " + to_string(x.shape()));
  if (!(area_fraction > 0.0 && area_fraction <= 1.0)) throw ParameterError("crop area fraction must lie in (0, 1]");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const double side = std::sqrt(area_fraction);
  const double cw = side * static_cast<double>(w);
  const double ch = side * static_cast<double>(h);
  if (offset_x < 0 || offset_y < 0 || offset_x + cw > w + 1e-9 || offset_y + ch > h + 1e-9) {
    throw ParameterError("crop window leaves the image");
  }
  Tensor<float> out(x.shape());
  for (std::size_t k = 0; k < c; ++k) {
    const float* plane = x.data() + k * h * w;
    auto get = [&](std::size_t px, std::size_t py) { return static_cast<double>(plane[py * w + px]); };
    for (std::size_t y = 0; y < h; ++y) {
      const double ys = clamp_coord(offset_y + (y + 0.5) * (ch / h) - 0.5, static_cast<double>(h - 1));
      for (std::size_t xx = 0; xx < w; ++xx) {
        const double xs = clamp_coord(offset_x + (xx + 0.5) * (cw / w) - 0.5, static_cast<double>(w - 1));
        out[(k * h + y) * w + xx] = static_cast<float>(bilinear(get, w, h, xs, ys));
      }
    }
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& x, Prng& rng, AugmentPolicy policy) {
  if (policy == AugmentPolicy::none) return x;
  const double area = 0.9 + 0.1 * rng.uniform();
  const double side = std::sqrt(area);
  const double slack_x = (1.0 - side) * static_cast<double>(x.dim(2));
  const double slack_y = (1.0 - side) * static_cast<double>(x.dim(1));
  const double ox = slack_x * rng.uniform();
  const double oy = slack_y * rng.uniform();
  return crop_resize(x, area, ox, oy);
}

}  // namespace asl
