#pragma once

#include "freeevent/image.hpp"
#include "freeevent/tensor.hpp"

namespace freeevent {

/// Fixed toy autoencoder. stride 1 is the affine identity x -> 2x - 1; stride 2
/// average-pools 2x2 blocks before the affine map and decodes by nearest
/// unpooling. It has no parameters.
struct Autoencoder {
  int stride = 1;
  int channels = 3;
  /// Expected image geometry; 0 accepts any size divisible by the stride.
  int image_height = 0;
  int image_width = 0;

  Shape latent_shape() const { return {channels, image_height / stride, image_width / stride}; }
};

LatentTensor encode_image(const Image& image, const Autoencoder& ae);
/// Pixels are clamped to [0, 1].
Image decode_latent(const LatentTensor& z, const Autoencoder& ae);

}  // namespace freeevent
