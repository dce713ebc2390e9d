#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "conked/descriptors.hpp"
#include "conked/image.hpp"

namespace conked {

// 3x3 convolution, stride 1, zero "same" padding, optional dilation.
struct ConvLayerSpec {
  int in_channels = 0;
  int out_channels = 0;
  int dilation = 1;
  bool relu = true;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

// sum over layers of 9 * in * out + out
std::size_t parameter_count(std::span<const ConvLayerSpec> layers);
// sum over layers of dilation: distance from an output pixel to the farthest
// input pixel that influences it.
int receptive_field_radius(std::span<const ConvLayerSpec> layers);

class ConvDescriptorNet {
 public:
  ConvDescriptorNet() = default;
  // Parameters start at zero. Throws invalid_argument when consecutive
  // layers do not chain or a size is non-positive.
  explicit ConvDescriptorNet(std::vector<ConvLayerSpec> layers);

  // Rectifier after every layer except the last.
  static ConvDescriptorNet make(int in_channels, const std::vector<int>& channels, const std::vector<int>& dilations);
  // Channels [16, 16, dim], dilations [1, 2, 4].
  static ConvDescriptorNet make_default(int in_channels = 3, int dim = 16);

  // He-normal weights from the "init" stream of `seed`, zero biases.
  void initialize(std::uint64_t seed);

  const std::vector<ConvLayerSpec>& layers() const { return layers_; }
  int input_channels() const { return layers_.empty() ? 0 : layers_.front().in_channels; }
  int output_dim() const { return layers_.empty() ? 0 : layers_.back().out_channels; }
  int receptive_radius() const { return receptive_field_radius(layers_); }

  // Per layer: weights laid out [ky][kx][in][out], then out biases.
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const;

  friend bool operator==(const ConvDescriptorNet&, const ConvDescriptorNet&) = default;

 private:
  std::vector<ConvLayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// z = v / |v|; vectors with |v| <= 1e-12 map to e_0. Returns |v|.
double l2_normalize(std::span<const double> v, std::span<double> z);
// Gradient with respect to v given dL/dz: (g - z (z . g)) / |v|, or zero
// when the e_0 fallback was taken.
void l2_normalize_backward(std::span<const double> z, double norm, std::span<const double> grad_z,
                           std::span<double> grad_v);

// Throws shape_mismatch when image channels differ from the input channels.
DescriptorBlock forward_dense(const ConvDescriptorNet& net, const Image& image);

namespace detail {
// Channel-innermost values over the rectangle [x0, x0 + w) x [y0, y0 + h)
// in image coordinates.
struct Activation {
  int x0 = 0, y0 = 0, w = 0, h = 0, c = 0;
  std::vector<double> v;
};
}  // namespace detail

struct PixelIndex {
  int x = 0;
  int y = 0;

  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

// Descriptors at a few pixels computed on local patches of the receptive
// field, numerically equal to forward_dense at those pixels. Keeps the
// forward activations so the parameter gradient can be back-propagated.
class PatchEvaluator {
 public:
  // Throws out_of_bounds for pixels outside the image, shape_mismatch for a
  // channel mismatch.
  PatchEvaluator(const ConvDescriptorNet& net, const Image& image, std::vector<PixelIndex> pixels);

  std::size_t size() const { return pixels_.size(); }
  int dim() const { return dim_; }
  // size() x dim unit rows in double precision.
  const std::vector<double>& descriptors() const { return z_; }

  // Accumulates dL/dtheta into grad_params given dL/dz (size() x dim).
  void backward(std::span<const double> grad_z, std::span<double> grad_params) const;

 private:
  const ConvDescriptorNet* net_;
  int image_w_;
  int image_h_;
  int dim_;
  std::vector<PixelIndex> pixels_;
  // Per pixel: input patch followed by every layer output.
  std::vector<std::vector<detail::Activation>> tapes_;
  std::vector<double> z_;
  std::vector<double> norms_;
};

// Magic "CKDN", u32 layer count, per layer u32 (in, out, dilation, relu),
// then the parameters as f32 little-endian in declaration order.
void save_checkpoint(const std::filesystem::path& path, const ConvDescriptorNet& net);
ConvDescriptorNet load_checkpoint(const std::filesystem::path& path);

}  // namespace conked
