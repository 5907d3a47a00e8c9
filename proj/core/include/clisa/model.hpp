#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "clisa/graph.hpp"
#include "clisa/kernels.hpp"
#include "clisa/rng.hpp"
#include "clisa/tensor.hpp"

namespace clisa {

struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Architecture and training knobs. Defaults are the reference configuration
/// for raw EEG at 250 Hz; desk-scale runs override them.
struct Hyperparams {
  std::size_t k1 = 16;         // spatial filters
  std::size_t k2 = 16;         // temporal filters
  std::size_t p1 = 60;         // temporal filter length
  std::size_t pool = 30;       // average pooling kernel == stride (S)
  std::size_t p2 = 6;          // projector temporal filter length
  std::size_t c = 2;           // depthwise multiplier
  double tau = 0.5;            // contrastive temperature
  double sample_len_s = 5.0;   // contrastive sample length, seconds
  double lr = 7e-4;            // initial learning rate
  double weight_decay = 0.015;
  std::size_t epochs = 100;
  std::size_t patience = 30;

  void validate() const {
    if (k1 < 1 || k2 < 1 || p1 < 1 || pool < 1 || p2 < 1 || c < 1)
      throw config_error("hyperparams: counts must be positive");
    if (!(tau > 0)) throw config_error("hyperparams: temperature must be positive");
    if (!(sample_len_s > 0) || !(lr > 0)) throw config_error("hyperparams: invalid value");
  }

  /// Flattened projector output length for an input of temporal extent T.
  std::size_t embedding_len(std::size_t t) const {
    const std::size_t pooled = t / pool;
    if (pooled < p2) throw dim_error("embedding_len: input too short for projector");
    return c * c * k2 * (pooled - p2 + 1);
  }
};

template <class Real>
struct EncoderParams {
  Tensor<Real> spatial;   // [K1 x M]
  Tensor<Real> temporal;  // [K2 x P1]

  std::size_t input_channels() const { return spatial.dim(1); }
};

template <class Real>
struct ProjectorParams {
  std::size_t pool_kernel = 30;
  Tensor<Real> dw_spatial;   // [K2 x C x K1]
  Tensor<Real> dw_temporal;  // [C*K2 x C x P2]
};

template <class Real>
struct ModelParams {
  EncoderParams<Real> encoder;
  ProjectorParams<Real> projector;

  template <class Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.encoder.spatial = encoder.spatial.template cast<Other>();
    out.encoder.temporal = encoder.temporal.template cast<Other>();
    out.projector.pool_kernel = projector.pool_kernel;
    out.projector.dw_spatial = projector.dw_spatial.template cast<Other>();
    out.projector.dw_temporal = projector.dw_temporal.template cast<Other>();
    return out;
  }
};

/// Weights ~ uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per filter; no biases
/// anywhere (the forward equations have none).
template <class Real>
ModelParams<Real> init_params(const Hyperparams& hp, std::size_t input_channels,
                              std::uint64_t seed) {
  hp.validate();
  auto fill = [](Tensor<Real>& t, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<Real>(rng.uniform(-bound, bound));
  };
  Rng rng(derive_seed(seed, "model-init"));
  ModelParams<Real> p;
  p.encoder.spatial = Tensor<Real>({hp.k1, input_channels});
  fill(p.encoder.spatial, input_channels, rng);
  p.encoder.temporal = Tensor<Real>({hp.k2, hp.p1});
  fill(p.encoder.temporal, hp.p1, rng);
  p.projector.pool_kernel = hp.pool;
  p.projector.dw_spatial = Tensor<Real>({hp.k2, hp.c, hp.k1});
  fill(p.projector.dw_spatial, hp.k1, rng);
  p.projector.dw_temporal = Tensor<Real>({hp.c * hp.k2, hp.c, hp.p2});
  fill(p.projector.dw_temporal, hp.p2, rng);
  return p;
}

// ---- plain forwards (prediction path, no tape) ---------------------------------

/// Spatial then temporal convolution: [M x T] -> [K2 x K1 x T] (same padding).
template <class Real>
Tensor<Real> encoder_forward(const Tensor<Real>& x, const EncoderParams<Real>& p) {
  require_shape(x, 2, "encoder input");
  if (x.dim(0) != p.spatial.dim(1))
    throw dim_error("encoder: input has " + std::to_string(x.dim(0)) +
                    " channels, spatial filters expect " + std::to_string(p.spatial.dim(1)));
  if (x.dim(1) < p.temporal.dim(1))
    throw dim_error("encoder: input shorter than temporal filter");
  const std::size_t k1 = p.spatial.dim(0), k2 = p.temporal.dim(0);
  const std::size_t t = x.dim(1);
  Tensor<Real> h1({k1, t});
  kernels::conv_contract_fwd(x, p.spatial, h1);
  Tensor<Real> h({k2, k1, t});
  kernels::conv_rows_fwd(h1, p.temporal, kernels::same_pad_left(p.temporal.dim(1)), h);
  return h;
}

/// Pool(ELU) -> depthwise spatial + ELU -> depthwise temporal + ELU -> flatten.
template <class Real>
Tensor<Real> projector_forward(const Tensor<Real>& h, const ProjectorParams<Real>& p) {
  require_shape(h, 3, "projector input");
  const std::size_t k2 = h.dim(0), k1 = h.dim(1), t = h.dim(2);
  const std::size_t s = p.pool_kernel;
  const std::size_t c = p.dw_spatial.dim(1);
  const std::size_t p2 = p.dw_temporal.dim(2);
  const std::size_t pooled = t / s;
  if (pooled < p2) throw dim_error("projector: input too short for temporal filter");

  Tensor<Real> hp({k2, k1, pooled});
  kernels::pool_elu_fwd(h, s, hp);

  Tensor<Real> g({c * k2, 1, pooled});
  kernels::depthwise_spatial_fwd(hp, p.dw_spatial, g);
  for (auto& v : g.data) v = kernels::elu(v);

  Tensor<Real> z3({c * c * k2, 1, pooled - p2 + 1});
  kernels::depthwise_temporal_fwd(g, p.dw_temporal, z3);
  for (auto& v : z3.data) v = kernels::elu(v);

  const std::size_t flat = z3.size();
  return Tensor<Real>({flat}, std::move(z3.data));
}

// ---- graph forwards (training path) --------------------------------------------

template <class Real>
struct ModelNodes {
  typename Graph<Real>::Id spatial, temporal, dw_spatial, dw_temporal;
};

template <class Real>
ModelNodes<Real> insert_params(Graph<Real>& g, const ModelParams<Real>& p) {
  return {g.param(p.encoder.spatial), g.param(p.encoder.temporal),
          g.param(p.projector.dw_spatial), g.param(p.projector.dw_temporal)};
}

template <class Real>
typename Graph<Real>::Id encoder_forward(Graph<Real>& g, typename Graph<Real>::Id x,
                                         const ModelNodes<Real>& n) {
  auto h1 = g.conv_channel_contract(x, n.spatial);
  return g.conv_temporal_rows(h1, n.temporal, Padding::same_zero);
}

/// The three projector stages, exposed separately so the trainer can insert
/// stratified normalization between them.
template <class Real>
typename Graph<Real>::Id projector_pool(Graph<Real>& g, typename Graph<Real>::Id h,
                                        std::size_t pool_kernel) {
  return g.avg_pool(h, pool_kernel);
}

template <class Real>
typename Graph<Real>::Id projector_spatial(Graph<Real>& g, typename Graph<Real>::Id pooled,
                                           const ModelNodes<Real>& n) {
  return g.elu(g.depthwise_conv1d(pooled, n.dw_spatial));
}

template <class Real>
typename Graph<Real>::Id projector_temporal(Graph<Real>& g, typename Graph<Real>::Id gmaps,
                                            const ModelNodes<Real>& n) {
  return g.elu(g.depthwise_conv1d(gmaps, n.dw_temporal));
}

// ---- checkpoint serialization ---------------------------------------------------
// magic 'CLSA', u16 version, u32 counts {M,K1,K2,P1,S,P2,C,epochs,patience},
// f32 {tau, sample_len_s, lr, weight_decay}, then tensors as little-endian f32
// in declaration order. Round trip through f32 is bit exact.

namespace detail {
inline void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<char*>(b), 4);
}
inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}
inline std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw format_error("checkpoint: truncated file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw format_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace detail

constexpr std::uint16_t kCheckpointVersion = 1;

template <class Real>
void save_checkpoint(const ModelParams<Real>& p, const Hyperparams& hp,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw format_error("checkpoint: cannot write " + path);
  os.write("CLSA", 4);
  detail::put_u16(os, kCheckpointVersion);
  const std::uint32_t counts[9] = {
      static_cast<std::uint32_t>(p.encoder.input_channels()),
      static_cast<std::uint32_t>(hp.k1),  static_cast<std::uint32_t>(hp.k2),
      static_cast<std::uint32_t>(hp.p1),  static_cast<std::uint32_t>(hp.pool),
      static_cast<std::uint32_t>(hp.p2),  static_cast<std::uint32_t>(hp.c),
      static_cast<std::uint32_t>(hp.epochs), static_cast<std::uint32_t>(hp.patience)};
  for (auto v : counts) detail::put_u32(os, v);
  detail::put_f32(os, static_cast<float>(hp.tau));
  detail::put_f32(os, static_cast<float>(hp.sample_len_s));
  detail::put_f32(os, static_cast<float>(hp.lr));
  detail::put_f32(os, static_cast<float>(hp.weight_decay));
  for (const Tensor<Real>* t : {&p.encoder.spatial, &p.encoder.temporal,
                                &p.projector.dw_spatial, &p.projector.dw_temporal})
    for (Real v : t->data) detail::put_f32(os, static_cast<float>(v));
  if (!os) throw format_error("checkpoint: write failure for " + path);
}

template <class Real>
std::pair<ModelParams<Real>, Hyperparams> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CLSA", 4) != 0)
    throw format_error("checkpoint: bad magic in " + path);
  const std::uint16_t version = detail::get_u16(is);
  if (version != kCheckpointVersion)
    throw format_error("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t counts[9];
  for (auto& v : counts) v = detail::get_u32(is);
  Hyperparams hp;
  const std::size_t m = counts[0];
  hp.k1 = counts[1];
  hp.k2 = counts[2];
  hp.p1 = counts[3];
  hp.pool = counts[4];
  hp.p2 = counts[5];
  hp.c = counts[6];
  hp.epochs = counts[7];
  hp.patience = counts[8];
  hp.tau = detail::get_f32(is);
  hp.sample_len_s = detail::get_f32(is);
  hp.lr = detail::get_f32(is);
  hp.weight_decay = detail::get_f32(is);
  hp.validate();

  ModelParams<Real> p;
  p.encoder.spatial = Tensor<Real>({hp.k1, m});
  p.encoder.temporal = Tensor<Real>({hp.k2, hp.p1});
  p.projector.pool_kernel = hp.pool;
  p.projector.dw_spatial = Tensor<Real>({hp.k2, hp.c, hp.k1});
  p.projector.dw_temporal = Tensor<Real>({hp.c * hp.k2, hp.c, hp.p2});
  for (Tensor<Real>* t : {&p.encoder.spatial, &p.encoder.temporal,
                          &p.projector.dw_spatial, &p.projector.dw_temporal})
    for (auto& v : t->data) v = static_cast<Real>(detail::get_f32(is));
  if (!p.encoder.spatial.all_finite() || !p.encoder.temporal.all_finite() ||
      !p.projector.dw_spatial.all_finite() || !p.projector.dw_temporal.all_finite())
    throw format_error("checkpoint: non-finite parameters in " + path);
  return {std::move(p), hp};
}

}  // namespace clisa
