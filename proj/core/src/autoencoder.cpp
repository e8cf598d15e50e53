#include "freeevent/autoencoder.hpp"

#include <algorithm>
#include <string>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

void check_stride(const Autoencoder& ae) {
  if (ae.stride != 1 && ae.stride != 2) throw ParameterError("autoencoder stride must be 1 or 2");
}

int pad_to(int v, int s) { return (s - v % s) % s; }

}  // namespace

LatentTensor encode_image(const Image& image, const Autoencoder& ae) {
  check_stride(ae);
  const int s = ae.stride;
  if (image.channels != ae.channels)
    throw ShapeError("encode_image: image has " + std::to_string(image.channels) + " channels, autoencoder expects " +
                     std::to_string(ae.channels));
  if (image.height % s || image.width % s)
    throw ShapeError("encode_image: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible by stride " + std::to_string(s) + "; pad by " +
                     std::to_string(pad_to(image.height, s)) + " rows and " + std::to_string(pad_to(image.width, s)) +
                     " columns");
  if ((ae.image_height && image.height != ae.image_height) || (ae.image_width && image.width != ae.image_width))
    throw ShapeError("encode_image: expected " + std::to_string(ae.image_height) + "x" +
                     std::to_string(ae.image_width) + " image");
  const int h = image.height / s, w = image.width / s;
  LatentTensor z({image.channels, h, w});
  const double inv = 1.0 / (s * s);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) acc += image.at(y * s + dy, x * s + dx, c);
        z.at(c, y, x) = 2.0 * (acc * inv) - 1.0;
      }
  return z;
}

Image decode_latent(const LatentTensor& z, const Autoencoder& ae) {
  check_stride(ae);
  if (z.rank() != 3 || z.dim(0) != ae.channels)
    throw ShapeError("decode_latent: latent " + shape_string(z.shape()) + " does not have " +
                     std::to_string(ae.channels) + " channels");
  if (ae.image_height && ae.image_width && z.shape() != ae.latent_shape())
    throw ShapeError("decode_latent: latent " + shape_string(z.shape()) + " vs configured " +
                     shape_string(ae.latent_shape()));
  const int s = ae.stride, h = z.dim(1), w = z.dim(2);
  Image img(h * s, w * s, ae.channels);
  for (int y = 0; y < h * s; ++y)
    for (int x = 0; x < w * s; ++x)
      for (int c = 0; c < ae.channels; ++c)
        img.at(y, x, c) = std::clamp((z.at(c, y / s, x / s) + 1.0) * 0.5, 0.0, 1.0);
  return img;
}

}  // namespace freeevent
