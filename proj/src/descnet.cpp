#include "conked/descnet.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "conked/block_io.hpp"
#include "conked/error.hpp"
#include "conked/io_util.hpp"
#include "conked/rng.hpp"
#include "conked/simd/kernels.hpp"

namespace conked {

using detail::Activation;

std::size_t parameter_count(std::span<const ConvLayerSpec> layers) {
  std::size_t n = 0;
  for (const auto& l : layers) {
    n += 9 * static_cast<std::size_t>(l.in_channels) * static_cast<std::size_t>(l.out_channels) +
         static_cast<std::size_t>(l.out_channels);
  }
  return n;
}

int receptive_field_radius(std::span<const ConvLayerSpec> layers) {
  int r = 0;
  for (const auto& l : layers) r += l.dilation;
  return r;
}

ConvDescriptorNet::ConvDescriptorNet(std::vector<ConvLayerSpec> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(Errc::invalid_argument, "network needs at least one layer");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.in_channels <= 0 || l.out_channels <= 0 || l.dilation <= 0)
      throw Error(Errc::invalid_argument, "layer " + std::to_string(i) + " has a non-positive size");
    if (i > 0 && layers_[i - 1].out_channels != l.in_channels)
      throw Error(Errc::invalid_argument, "layer " + std::to_string(i) + " input does not match previous output");
    offsets_.push_back(offset);
    offset += parameter_count(std::span(&l, 1));
  }
  params_.assign(offset, 0.0);
}

std::size_t ConvDescriptorNet::bias_offset(std::size_t layer) const {
  const auto& l = layers_[layer];
  return offsets_[layer] + 9 * static_cast<std::size_t>(l.in_channels) * static_cast<std::size_t>(l.out_channels);
}

ConvDescriptorNet ConvDescriptorNet::make(int in_channels, const std::vector<int>& channels,
                                          const std::vector<int>& dilations) {
  if (channels.size() != dilations.size())
    throw Error(Errc::invalid_argument, "channels and dilations must have the same length");
  std::vector<ConvLayerSpec> layers;
  int in = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    layers.push_back({in, channels[i], dilations[i], i + 1 < channels.size()});
    in = channels[i];
  }
  return ConvDescriptorNet(std::move(layers));
}

ConvDescriptorNet ConvDescriptorNet::make_default(int in_channels, int dim) {
  return make(in_channels, {16, 16, dim}, {1, 2, 4});
}

void ConvDescriptorNet::initialize(std::uint64_t seed) {
  Rng rng = make_rng(seed, "init");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const double stddev = std::sqrt(2.0 / (9.0 * layers_[i].in_channels));
    for (std::size_t p = offsets_[i]; p < bias_offset(i); ++p) params_[p] = normal(rng, 0.0, stddev);
    for (int o = 0; o < layers_[i].out_channels; ++o) params_[bias_offset(i) + static_cast<std::size_t>(o)] = 0.0;
  }
}

double l2_normalize(std::span<const double> v, std::span<double> z) {
  const double norm = std::sqrt(simd::dot(v, v));
  if (norm <= 1e-12) {
    std::fill(z.begin(), z.end(), 0.0);
    if (!z.empty()) z[0] = 1.0;
    return norm;
  }
  for (std::size_t i = 0; i < v.size(); ++i) z[i] = v[i] / norm;
  return norm;
}

void l2_normalize_backward(std::span<const double> z, double norm, std::span<const double> grad_z,
                           std::span<double> grad_v) {
  if (norm <= 1e-12) {
    std::fill(grad_v.begin(), grad_v.end(), 0.0);
    return;
  }
  const double zg = simd::dot(z, grad_z);
  for (std::size_t i = 0; i < z.size(); ++i) grad_v[i] = (grad_z[i] - z[i] * zg) / norm;
}

namespace {

struct Geometry {
  int image_w;
  int image_h;
};

Activation make_activation(int x0, int y0, int w, int h, int c) {
  Activation a{x0, y0, w, h, c, {}};
  a.v.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), 0.0);
  return a;
}

inline const double* cell(const Activation& a, int x, int y) {
  const int lx = x - a.x0, ly = y - a.y0;
  if (lx < 0 || ly < 0 || lx >= a.w || ly >= a.h) return nullptr;
  return a.v.data() + (static_cast<std::size_t>(ly) * static_cast<std::size_t>(a.w) + static_cast<std::size_t>(lx)) *
                          static_cast<std::size_t>(a.c);
}

inline double* cell(Activation& a, int x, int y) {
  return const_cast<double*>(cell(static_cast<const Activation&>(a), x, y));
}

// Input values over a rectangle; pixels outside the image stay zero.
Activation image_patch(const Image& img, int x0, int y0, int w, int h) {
  Activation a = make_activation(x0, y0, w, h, img.channels);
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      if (!img.contains(x, y)) continue;
      double* dst = cell(a, x, y);
      for (int c = 0; c < img.channels; ++c) dst[c] = img.at(x, y, c);
    }
  }
  return a;
}

// One layer evaluated on `out_rect`. Outputs at pixels outside the image are
// zero, which is exactly the zero padding the next layer sees. Inputs outside
// `in` read as zero.
Activation conv_forward(const Activation& in, const ConvLayerSpec& spec, const double* weights, const double* bias,
                        int x0, int y0, int w, int h, Geometry g) {
  Activation out = make_activation(x0, y0, w, h, spec.out_channels);
  const auto cin = static_cast<std::size_t>(spec.in_channels);
  const auto cout = static_cast<std::size_t>(spec.out_channels);
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      if (x < 0 || y < 0 || x >= g.image_w || y >= g.image_h) continue;
      std::span<double> acc(cell(out, x, y), cout);
      std::copy(bias, bias + cout, acc.begin());
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double* src = cell(in, x + (kx - 1) * spec.dilation, y + (ky - 1) * spec.dilation);
          if (src == nullptr) continue;
          const double* wt = weights + static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            if (src[ci] != 0.0) simd::axpy(src[ci], std::span(wt + ci * cout, cout), acc);
          }
        }
      }
      if (spec.relu) {
        for (double& v : acc) v = std::max(v, 0.0);
      }
    }
  }
  return out;
}

// grad_out is d L / d (layer output) over out's rectangle and is consumed
// in place (rectifier mask applied). grad_in may be null for the first layer.
void conv_backward(const Activation& in, const Activation& out, std::vector<double>& grad_out,
                   const ConvLayerSpec& spec, const double* weights, double* grad_weights, double* grad_bias,
                   Activation* grad_in, Geometry g) {
  const auto cin = static_cast<std::size_t>(spec.in_channels);
  const auto cout = static_cast<std::size_t>(spec.out_channels);
  for (int y = out.y0; y < out.y0 + out.h; ++y) {
    for (int x = out.x0; x < out.x0 + out.w; ++x) {
      if (x < 0 || y < 0 || x >= g.image_w || y >= g.image_h) continue;
      const std::size_t base =
          (static_cast<std::size_t>(y - out.y0) * static_cast<std::size_t>(out.w) + static_cast<std::size_t>(x - out.x0)) *
          cout;
      std::span<double> go(grad_out.data() + base, cout);
      const double* o = out.v.data() + base;
      bool any = false;
      for (std::size_t c = 0; c < cout; ++c) {
        if (spec.relu && o[c] <= 0.0) go[c] = 0.0;
        any = any || go[c] != 0.0;
      }
      if (!any) continue;
      for (std::size_t c = 0; c < cout; ++c) grad_bias[c] += go[c];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = x + (kx - 1) * spec.dilation, iy = y + (ky - 1) * spec.dilation;
          const double* src = cell(in, ix, iy);
          if (src == nullptr) continue;
          const std::size_t tap = static_cast<std::size_t>(ky * 3 + kx) * cin * cout;
          double* gsrc = grad_in != nullptr ? cell(*grad_in, ix, iy) : nullptr;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            if (src[ci] != 0.0) simd::axpy(src[ci], std::span<const double>(go), std::span(grad_weights + tap + ci * cout, cout));
            if (gsrc != nullptr) gsrc[ci] += simd::dot(std::span(weights + tap + ci * cout, cout), std::span<const double>(go));
          }
        }
      }
    }
  }
}

void check_channels(const ConvDescriptorNet& net, const Image& image) {
  if (net.layers().empty()) throw Error(Errc::invalid_argument, "network has no layers");
  if (image.channels != net.input_channels())
    throw Error(Errc::shape_mismatch, "image has " + std::to_string(image.channels) + " channels, network expects " +
                                          std::to_string(net.input_channels()));
}

}  // namespace

DescriptorBlock forward_dense(const ConvDescriptorNet& net, const Image& image) {
  check_channels(net, image);
  const Geometry g{image.width, image.height};
  Activation act = image_patch(image, 0, 0, image.width, image.height);
  const auto& p = net.parameters();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    act = conv_forward(act, net.layers()[l], p.data() + net.weight_offset(l), p.data() + net.bias_offset(l), 0, 0,
                       image.width, image.height, g);
  }
  const auto d = static_cast<std::size_t>(net.output_dim());
  std::vector<float> values(act.v.size());
  std::vector<double> z(d);
  for (std::size_t i = 0; i < act.v.size(); i += d) {
    l2_normalize(std::span(act.v.data() + i, d), z);
    for (std::size_t c = 0; c < d; ++c) values[i + c] = static_cast<float>(z[c]);
  }
  return DescriptorBlock(image.width, image.height, net.output_dim(), std::move(values));
}

PatchEvaluator::PatchEvaluator(const ConvDescriptorNet& net, const Image& image, std::vector<PixelIndex> pixels)
    : net_(&net), image_w_(image.width), image_h_(image.height), dim_(net.output_dim()), pixels_(std::move(pixels)) {
  check_channels(net, image);
  const Geometry g{image_w_, image_h_};
  const auto& layers = net.layers();
  const auto& p = net.parameters();
  const auto d = static_cast<std::size_t>(dim_);
  z_.assign(pixels_.size() * d, 0.0);
  norms_.assign(pixels_.size(), 0.0);
  tapes_.resize(pixels_.size());
  for (std::size_t k = 0; k < pixels_.size(); ++k) {
    const auto [px, py] = pixels_[k];
    if (!image.contains(px, py))
      throw Error(Errc::out_of_bounds, "pixel (" + std::to_string(px) + ", " + std::to_string(py) + ") outside image");
    // Radius of each layer's output that the final pixel depends on.
    int radius = net.receptive_radius();
    auto& tape = tapes_[k];
    tape.push_back(image_patch(image, px - radius, py - radius, 2 * radius + 1, 2 * radius + 1));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      radius -= layers[l].dilation;
      tape.push_back(conv_forward(tape.back(), layers[l], p.data() + net.weight_offset(l), p.data() + net.bias_offset(l),
                                  px - radius, py - radius, 2 * radius + 1, 2 * radius + 1, g));
    }
    norms_[k] = l2_normalize(tape.back().v, std::span(z_.data() + k * d, d));
  }
}

void PatchEvaluator::backward(std::span<const double> grad_z, std::span<double> grad_params) const {
  const auto d = static_cast<std::size_t>(dim_);
  if (grad_z.size() != pixels_.size() * d) throw Error(Errc::shape_mismatch, "gradient does not match descriptors");
  if (grad_params.size() != net_->parameters().size())
    throw Error(Errc::shape_mismatch, "parameter gradient has the wrong size");
  const Geometry g{image_w_, image_h_};
  const auto& layers = net_->layers();
  const auto& p = net_->parameters();
  for (std::size_t k = 0; k < pixels_.size(); ++k) {
    const auto& tape = tapes_[k];
    std::vector<double> grad(d);
    l2_normalize_backward(std::span(z_.data() + k * d, d), norms_[k], grad_z.subspan(k * d, d), grad);
    for (std::size_t l = layers.size(); l-- > 0;) {
      const Activation& in = tape[l];
      Activation grad_in;
      if (l > 0) grad_in = make_activation(in.x0, in.y0, in.w, in.h, in.c);
      conv_backward(in, tape[l + 1], grad, layers[l], p.data() + net_->weight_offset(l),
                    grad_params.data() + net_->weight_offset(l), grad_params.data() + net_->bias_offset(l),
                    l > 0 ? &grad_in : nullptr, g);
      grad = std::move(grad_in.v);
    }
  }
}

void save_checkpoint(const std::filesystem::path& path, const ConvDescriptorNet& net) {
  std::vector<unsigned char> out = {'C', 'K', 'D', 'N'};
  put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    put_u32(out, static_cast<std::uint32_t>(l.in_channels));
    put_u32(out, static_cast<std::uint32_t>(l.out_channels));
    put_u32(out, static_cast<std::uint32_t>(l.dilation));
    put_u32(out, l.relu ? 1u : 0u);
  }
  for (double v : net.parameters()) put_f32(out, static_cast<float>(v));
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(out.data()), out.size()));
}

ConvDescriptorNet load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(p, "CKDN", 4) != 0)
    throw Error(Errc::format_error, path.string() + ": not a CKDN checkpoint");
  const std::uint32_t n = get_u32(p + 4);
  if (n == 0 || n > 1024 || bytes.size() < 8 + 16 * static_cast<std::size_t>(n))
    throw Error(Errc::format_error, path.string() + ": truncated layer table");
  std::vector<ConvLayerSpec> layers;
  std::size_t at = 8;
  for (std::uint32_t i = 0; i < n; ++i, at += 16) {
    const std::uint32_t relu = get_u32(p + at + 12);
    if (relu > 1) throw Error(Errc::format_error, path.string() + ": bad rectifier flag");
    layers.push_back({static_cast<int>(get_u32(p + at)), static_cast<int>(get_u32(p + at + 4)),
                      static_cast<int>(get_u32(p + at + 8)), relu == 1});
  }
  ConvDescriptorNet net(std::move(layers));
  auto& params = net.parameters();
  if (bytes.size() != at + 4 * params.size())
    throw Error(Errc::format_error, path.string() + ": parameter section has the wrong size");
  for (std::size_t i = 0; i < params.size(); ++i, at += 4) params[i] = get_f32(p + at);
  return net;
}

}  // namespace conked
