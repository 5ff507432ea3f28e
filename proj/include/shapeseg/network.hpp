#pragma once

// Multi-head encoder-decoder: a shared residual encoder, a global-filter
// regression trunk with shape/pose heads, and a decoder with encoder skip
// connections producing K distance-map channels. Includes the training loop,
// checkpointing and the parameter-to-landmark conversion.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "shapeseg/grid_io.hpp"
#include "shapeseg/layers.hpp"
#include "shapeseg/losses.hpp"
#include "shapeseg/shape_model.hpp"

namespace shapeseg {

struct NetworkConfig {
  int input_size = 64;
  int levels = 3;
  int base_features = 8;
  int shape_modes = 12;   // M
  int map_channels = 2;   // K
  int trunk_filter = 0;   // A override; 0 derives input_size / 2^levels
  int trunk_features = 0; // 0 derives base_features * 2^levels
  int head_hidden = 32;

  int a() const { return trunk_filter > 0 ? trunk_filter : input_size >> levels; }
  int tf() const { return trunk_features > 0 ? trunk_features : base_features << levels; }

  void validate() const {
    if (levels < 1 || input_size < 8) throw ConfigError("NetworkConfig: bad levels/input_size");
    if (input_size % (1 << levels) != 0)
      throw ConfigError("NetworkConfig: input_size must be divisible by 2^levels");
    if ((input_size >> levels) < 2) throw ConfigError("NetworkConfig: input_size/2^levels < 2");
    if (base_features < 4) throw ConfigError("NetworkConfig: base_features must be >= 4");
    if (shape_modes < 1 || map_channels < 1 || head_hidden < 1)
      throw ConfigError("NetworkConfig: output sizes must be positive");
  }

  bool operator==(const NetworkConfig&) const = default;
};

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"input_size", c.input_size},     {"levels", c.levels},
          {"base_features", c.base_features}, {"shape_modes", c.shape_modes},
          {"map_channels", c.map_channels}, {"trunk_filter", c.trunk_filter},
          {"trunk_features", c.trunk_features}, {"head_hidden", c.head_hidden}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.levels = j.at("levels").get<int>();
  c.base_features = j.at("base_features").get<int>();
  c.shape_modes = j.at("shape_modes").get<int>();
  c.map_channels = j.at("map_channels").get<int>();
  c.trunk_filter = j.at("trunk_filter").get<int>();
  c.trunk_features = j.at("trunk_features").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  return c;
}

// Residual block: two 3x3 convolutions, each followed by BN and PReLU; the
// skip path is the identity, or a projected 1x1 convolution when channel
// count or resolution changes.
struct ResBlock {
  Conv2D conv1, conv2;
  BatchNorm2D bn1, bn2;
  PReLU pr1, pr2;
  bool project = false;
  Conv2D skip_conv;
  BatchNorm2D skip_bn;
  PReLU skip_pr;

  ResBlock() = default;
  ResBlock(const std::string& name, int in_c, int out_c, int stride, Rng& rng)
      : conv1(name + ".conv1", in_c, out_c, 3, stride, rng),
        conv2(name + ".conv2", out_c, out_c, 3, 1, rng),
        bn1(name + ".bn1", out_c),
        bn2(name + ".bn2", out_c),
        pr1(name + ".pr1", out_c),
        pr2(name + ".pr2", out_c),
        project(in_c != out_c || stride != 1) {
    if (project) {
      skip_conv = Conv2D(name + ".skip_conv", in_c, out_c, 1, stride, rng);
      skip_bn = BatchNorm2D(name + ".skip_bn", out_c);
      skip_pr = PReLU(name + ".skip_pr", out_c);
    }
  }

  void register_params(ParamRegistry& reg) {
    conv1.register_params(reg);
    bn1.register_params(reg);
    pr1.register_params(reg);
    conv2.register_params(reg);
    bn2.register_params(reg);
    pr2.register_params(reg);
    if (project) {
      skip_conv.register_params(reg);
      skip_bn.register_params(reg);
      skip_pr.register_params(reg);
    }
  }

  Tensor forward(const Tensor& x, bool train) {
    Tensor t = pr1.forward(bn1.forward(conv1.forward(x), train));
    t = pr2.forward(bn2.forward(conv2.forward(std::move(t)), train));
    if (project) {
      Tensor s = skip_pr.forward(skip_bn.forward(skip_conv.forward(x), train));
      add_into(t, s);
    } else {
      add_into(t, x);
    }
    return t;
  }

  Tensor backward(const Tensor& dout) {
    Tensor dmain = conv1.backward(bn1.backward(pr1.backward(
        conv2.backward(bn2.backward(pr2.backward(dout))))));
    if (project) {
      Tensor dskip = skip_conv.backward(skip_bn.backward(skip_pr.backward(dout)));
      add_into(dmain, dskip);
    } else {
      add_into(dmain, dout);
    }
    return dmain;
  }
};

struct NetworkOutput {
  Tensor shape_coeffs;  // (B, M, 1, 1)
  Tensor pose;          // (B, 3, 1, 1)
  Tensor maps;          // (B, K, H, W)
};

class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::stream(seed, 0x696e6974);  // init stream
    const int F = cfg_.base_features;
    const int L = cfg_.levels;
    stem_ = ResBlock("stem", 1, F, 1, rng);
    for (int l = 0; l < L; ++l) {
      enc_.emplace_back("enc" + std::to_string(l), F << l, F << (l + 1), 2, rng);
    }
    trunk_conv_ = Conv2D("trunk.conv", F << L, cfg_.tf(), cfg_.a(), 1, rng);
    trunk_bn_ = BatchNorm2D("trunk.bn", cfg_.tf());
    trunk_pr_ = PReLU("trunk.pr", cfg_.tf());
    shape_fc1_ = Dense("shape.fc1", cfg_.tf(), cfg_.head_hidden, rng);
    shape_pr_ = PReLU("shape.pr", cfg_.head_hidden);
    shape_fc2_ = Dense("shape.fc2", cfg_.head_hidden, cfg_.shape_modes, rng);
    pose_fc1_ = Dense("pose.fc1", cfg_.tf(), cfg_.head_hidden, rng);
    pose_pr_ = PReLU("pose.pr", cfg_.head_hidden);
    pose_fc2_ = Dense("pose.fc2", cfg_.head_hidden, 3, rng);
    for (int l = L - 1; l >= 0; --l) {
      const int c_in = (F << (l + 1)) + (F << l);
      dec_.emplace_back("dec" + std::to_string(l), c_in, F << l, 1, rng);
    }
    final_conv_ = Conv2D("maps.final", F, cfg_.map_channels, 1, 1, rng);

    stem_.register_params(reg_);
    for (auto& b : enc_) b.register_params(reg_);
    trunk_conv_.register_params(reg_);
    trunk_bn_.register_params(reg_);
    trunk_pr_.register_params(reg_);
    shape_fc1_.register_params(reg_);
    shape_pr_.register_params(reg_);
    shape_fc2_.register_params(reg_);
    pose_fc1_.register_params(reg_);
    pose_pr_.register_params(reg_);
    pose_fc2_.register_params(reg_);
    for (auto& b : dec_) b.register_params(reg_);
    final_conv_.register_params(reg_);
  }

  // The registry points into member storage.
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const NetworkConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return reg_; }
  const ParamRegistry& registry() const { return reg_; }

  NetworkOutput forward(const Tensor& images, bool train) {
    if (images.c != 1 || images.h != cfg_.input_size || images.w != cfg_.input_size)
      throw std::invalid_argument("forward: images must be Bx1x" +
                                  std::to_string(cfg_.input_size) + "x" +
                                  std::to_string(cfg_.input_size));
    const int L = cfg_.levels;
    skips_.assign(L + 1, Tensor());
    skips_[0] = stem_.forward(images, train);
    for (int l = 0; l < L; ++l) skips_[l + 1] = enc_[l].forward(skips_[l], train);

    Tensor trunk = trunk_pr_.forward(trunk_bn_.forward(trunk_conv_.forward(skips_[L]), train));
    trunk_h_ = trunk.h;
    trunk_w_ = trunk.w;
    Tensor pooled = global_avg_pool(trunk);

    NetworkOutput out;
    out.shape_coeffs = shape_fc2_.forward(shape_pr_.forward(shape_fc1_.forward(pooled)));
    out.pose = pose_fc2_.forward(pose_pr_.forward(pose_fc1_.forward(pooled)));

    Tensor d = skips_[L];
    for (int idx = 0; idx < L; ++idx) {
      const int l = L - 1 - idx;
      d = upsample2x(d);
      d = concat_channels(d, skips_[l]);
      d = dec_[idx].forward(d, train);
    }
    out.maps = final_conv_.forward(d);
    return out;
  }

  void backward(const Tensor& d_shape, const Tensor& d_pose, const Tensor& d_maps) {
    const int L = cfg_.levels;
    const int F = cfg_.base_features;

    // Decoder path back to the bridge, collecting skip gradients.
    std::vector<Tensor> d_skip(L);
    Tensor dd = final_conv_.backward(d_maps);
    for (int idx = L - 1; idx >= 0; --idx) {
      const int l = L - 1 - idx;
      Tensor d_block_in = dec_[idx].backward(dd);
      auto [d_up, d_s] = split_channels(d_block_in, F << (l + 1));
      d_skip[l] = std::move(d_s);
      dd = upsample2x_backward(d_up);
    }

    // Regression heads back to the pooled trunk features.
    Tensor d_pooled = shape_fc1_.backward(shape_pr_.backward(shape_fc2_.backward(d_shape)));
    Tensor d_pooled_pose = pose_fc1_.backward(pose_pr_.backward(pose_fc2_.backward(d_pose)));
    add_into(d_pooled, d_pooled_pose);
    Tensor d_trunk = global_avg_pool_backward(d_pooled, trunk_h_, trunk_w_);
    Tensor d_bridge =
        trunk_conv_.backward(trunk_bn_.backward(trunk_pr_.backward(d_trunk)));
    add_into(d_bridge, dd);

    // Encoder chain with skip contributions.
    Tensor g = std::move(d_bridge);
    for (int l = L - 1; l >= 0; --l) {
      g = enc_[l].backward(g);
      add_into(g, d_skip[l]);
    }
    stem_.backward(g);
    skips_.clear();
  }

 private:
  NetworkConfig cfg_;
  ResBlock stem_;
  std::vector<ResBlock> enc_;
  Conv2D trunk_conv_;
  BatchNorm2D trunk_bn_;
  PReLU trunk_pr_;
  Dense shape_fc1_, shape_fc2_;
  PReLU shape_pr_;
  Dense pose_fc1_, pose_fc2_;
  PReLU pose_pr_;
  std::vector<ResBlock> dec_;
  Conv2D final_conv_;
  ParamRegistry reg_;
  std::vector<Tensor> skips_;
  int trunk_h_ = 0, trunk_w_ = 0;
};

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 2e-3;
  int batch_size = 32;
  LossWeights weights;  // configured weights; setups mask terms via effective
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || !(learning_rate > 0.0))
      throw ConfigError("TrainConfig: epochs, batch_size, learning_rate must be positive");
  }
};

// One prepared training example: image plus the three targets.
struct TrainItem {
  std::vector<float> image;      // H*W in [0,1]
  std::vector<float> coeffs;     // M
  std::array<float, 3> pose{};   // normalized
  std::vector<float> maps;       // K*H*W signed distances in px
};

using ItemFn = std::function<TrainItem(int epoch, int index)>;

struct EpochStats {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
  double val_dsc_lv = std::numeric_limits<double>::quiet_NaN();
  bool is_best = false;
};

using EpochCallback = std::function<void(const EpochStats&)>;

namespace detail {

inline double mask_dice(std::span<const float> a, std::span<const float> b) {
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] < 0.0f, ib = b[i] < 0.0f;
    na += ia;
    nb += ib;
    inter += (ia && ib);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace detail

// Forward + composite loss + gradients + one Adam update. Returns the
// pre-update loss breakdown (batch mean). `weights` here are the effective
// (possibly setup-masked) loss weights.
inline LossBreakdown train_step(Network& net, AdamOptimizer& adam,
                                const std::vector<const TrainItem*>& batch,
                                const LossWeights& weights) {
  const NetworkConfig& cfg = net.config();
  const int B = static_cast<int>(batch.size());
  const int M = cfg.shape_modes;
  const int hw = cfg.input_size * cfg.input_size;
  const std::size_t map_len = static_cast<std::size_t>(cfg.map_channels) * hw;

  Tensor images(B, 1, cfg.input_size, cfg.input_size);
  for (int b = 0; b < B; ++b)
    std::copy_n(batch[b]->image.data(), hw, images.data() + static_cast<std::size_t>(b) * hw);

  NetworkOutput out = net.forward(images, true);

  Tensor d_shape(B, M, 1, 1), d_pose(B, 3, 1, 1),
      d_maps(B, cfg.map_channels, cfg.input_size, cfg.input_size);
  double l1 = 0.0, l2 = 0.0, l3d = 0.0, l3m = 0.0;
  const double inv_b = 1.0 / B;
  for (int b = 0; b < B; ++b) {
    const TrainItem& it = *batch[b];
    std::span<const float> b_pred(out.shape_coeffs.data() + static_cast<std::size_t>(b) * M, M);
    std::span<const float> o_pred(out.pose.data() + static_cast<std::size_t>(b) * 3, 3);
    std::span<const float> m_pred(out.maps.data() + static_cast<std::size_t>(b) * map_len,
                                  map_len);
    l1 += mse_loss<float>(it.coeffs, b_pred);
    l2 += mse_loss<float>(it.pose, o_pred);
    mse_loss_grad<float>(it.coeffs, b_pred, weights.gamma1 * inv_b,
                         {d_shape.data() + static_cast<std::size_t>(b) * M, static_cast<std::size_t>(M)});
    mse_loss_grad<float>(it.pose, o_pred, weights.gamma2 * inv_b,
                         {d_pose.data() + static_cast<std::size_t>(b) * 3, 3});
    const SegLossTerms terms = segmentation_loss_grad<float>(
        it.maps, m_pred, cfg.map_channels, static_cast<std::size_t>(hw), weights.alpha,
        weights.gamma3 * inv_b, weights.gamma3 * weights.mu * inv_b,
        {d_maps.data() + static_cast<std::size_t>(b) * map_len, map_len});
    l3d += terms.dice;
    l3m += terms.mse;
  }
  l1 *= inv_b;
  l2 *= inv_b;
  l3d *= inv_b;
  l3m *= inv_b;

  LossBreakdown bd;
  bd.l1 = l1;
  bd.l2 = l2;
  bd.l3_dice = l3d;
  bd.l3_mse = l3m;
  bd.total = weights.gamma1 * l1 + weights.gamma2 * l2 + weights.gamma3 * (l3d + weights.mu * l3m);
  if (!std::isfinite(bd.total))
    throw RuntimeError("train_step: non-finite loss (l1=" + std::to_string(l1) +
                       " l2=" + std::to_string(l2) + " l3_dice=" + std::to_string(l3d) +
                       " l3_mse=" + std::to_string(l3m) + ")");

  adam.zero_grad(net.registry());
  net.backward(d_shape, d_pose, d_maps);
  adam.step(net.registry());
  return bd;
}

// Loss breakdown (and map-route cavity DSC) over a fixed item set, evaluation
// mode, no parameter updates.
inline std::pair<LossBreakdown, double> evaluate_items(Network& net,
                                                       const std::vector<TrainItem>& items,
                                                       const LossWeights& weights,
                                                       int batch_size) {
  const NetworkConfig& cfg = net.config();
  const int M = cfg.shape_modes;
  const int hw = cfg.input_size * cfg.input_size;
  const std::size_t map_len = static_cast<std::size_t>(cfg.map_channels) * hw;
  LossBreakdown acc;
  double dsc = 0.0;
  std::size_t done = 0;
  while (done < items.size()) {
    const int B = static_cast<int>(std::min<std::size_t>(batch_size, items.size() - done));
    Tensor images(B, 1, cfg.input_size, cfg.input_size);
    for (int b = 0; b < B; ++b)
      std::copy_n(items[done + b].image.data(), hw,
                  images.data() + static_cast<std::size_t>(b) * hw);
    NetworkOutput out = net.forward(images, false);
    for (int b = 0; b < B; ++b) {
      const TrainItem& it = items[done + b];
      std::span<const float> b_pred(out.shape_coeffs.data() + static_cast<std::size_t>(b) * M,
                                    M);
      std::span<const float> o_pred(out.pose.data() + static_cast<std::size_t>(b) * 3, 3);
      std::span<const float> m_pred(out.maps.data() + static_cast<std::size_t>(b) * map_len,
                                    map_len);
      acc.l1 += mse_loss<float>(it.coeffs, b_pred);
      acc.l2 += mse_loss<float>(it.pose, o_pred);
      const SegLossTerms terms = segmentation_loss<float>(
          it.maps, m_pred, cfg.map_channels, static_cast<std::size_t>(hw), weights.alpha);
      acc.l3_dice += terms.dice;
      acc.l3_mse += terms.mse;
      dsc += detail::mask_dice({it.maps.data(), static_cast<std::size_t>(hw)},
                               {m_pred.data(), static_cast<std::size_t>(hw)});
    }
    done += B;
  }
  const double inv = items.empty() ? 0.0 : 1.0 / static_cast<double>(items.size());
  acc.l1 *= inv;
  acc.l2 *= inv;
  acc.l3_dice *= inv;
  acc.l3_mse *= inv;
  acc.total = weights.gamma1 * acc.l1 + weights.gamma2 * acc.l2 +
              weights.gamma3 * (acc.l3_dice + weights.mu * acc.l3_mse);
  return {acc, dsc * inv};
}

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  // Serialized parameter/buffer state of the best epoch (checkpoint blob).
  std::string best_state;
};

// ---------------------------------------------------------------------------
// Checkpoints: "SSCK" magic, version, JSON header, raw float payload with
// every parameter (value, Adam m, Adam v) and buffer in registry order.

struct CheckpointMeta {
  NetworkConfig config;
  int epoch = 0;
  std::int64_t adam_step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::string setup;
  int fold = -1;
  std::uint64_t seed = 0;
};

namespace detail {

inline void append_floats(std::string& out, const std::vector<float>& v) {
  const std::size_t off = out.size();
  out.resize(off + v.size() * 4);
  std::memcpy(out.data() + off, v.data(), v.size() * 4);
}

inline void read_floats(const std::string& in, std::size_t& off, std::vector<float>& v) {
  if (off + v.size() * 4 > in.size()) throw RuntimeError("checkpoint: truncated payload");
  std::memcpy(v.data(), in.data() + off, v.size() * 4);
  off += v.size() * 4;
}

}  // namespace detail

inline std::string encode_checkpoint(const Network& net, const AdamOptimizer& adam,
                                     const CheckpointMeta& meta) {
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = to_json(net.config());
  header["epoch"] = meta.epoch;
  header["adam_step"] = adam.step_count();
  // Infinity is not representable in JSON; omit and restore the default.
  if (std::isfinite(meta.best_val)) header["best_val"] = meta.best_val;
  header["setup"] = meta.setup;
  header["fold"] = meta.fold;
  header["seed"] = meta.seed;
  nlohmann::json tensors = nlohmann::json::array();
  for (const Param* p : net.registry().params)
    tensors.push_back({{"name", p->name}, {"size", p->w.size()}, {"kind", "param"}});
  for (const Buffer* b : net.registry().buffers)
    tensors.push_back({{"name", b->name}, {"size", b->v.size()}, {"kind", "buffer"}});
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::string out = "SSCK";
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(hs.size()));
  out += hs;
  for (const Param* p : net.registry().params) {
    detail::append_floats(out, p->w);
    detail::append_floats(out, p->adam_m);
    detail::append_floats(out, p->adam_v);
  }
  for (const Buffer* b : net.registry().buffers) detail::append_floats(out, b->v);
  return out;
}

inline CheckpointMeta decode_checkpoint_header(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "SSCK") != 0)
    throw RuntimeError("checkpoint: bad magic");
  const std::uint32_t version = detail::get_u32(bytes, 4);
  if (version != 1) throw RuntimeError("checkpoint: unsupported version");
  const std::uint32_t hlen = detail::get_u32(bytes, 8);
  const nlohmann::json header = nlohmann::json::parse(bytes.substr(12, hlen));
  CheckpointMeta meta;
  meta.config = network_config_from_json(header.at("config"));
  meta.epoch = header.at("epoch").get<int>();
  meta.adam_step = header.at("adam_step").get<std::int64_t>();
  if (header.contains("best_val")) meta.best_val = header.at("best_val").get<double>();
  meta.setup = header.at("setup").get<std::string>();
  meta.fold = header.at("fold").get<int>();
  meta.seed = header.at("seed").get<std::uint64_t>();
  return meta;
}

inline CheckpointMeta restore_checkpoint(const std::string& bytes, Network& net,
                                         AdamOptimizer& adam) {
  const CheckpointMeta meta = decode_checkpoint_header(bytes);
  if (!(meta.config == net.config()))
    throw RuntimeError("checkpoint: config does not match the constructed network");
  const std::uint32_t hlen = detail::get_u32(bytes, 8);
  std::size_t off = 12 + hlen;
  for (Param* p : net.registry().params) {
    detail::read_floats(bytes, off, p->w);
    detail::read_floats(bytes, off, p->adam_m);
    detail::read_floats(bytes, off, p->adam_v);
  }
  for (Buffer* b : net.registry().buffers) detail::read_floats(bytes, off, b->v);
  if (off != bytes.size()) throw RuntimeError("checkpoint: trailing bytes");
  adam.set_step_count(meta.adam_step);
  return meta;
}

// Main training loop. Items are built per (epoch, index) by item_fn, so
// augmentation is drawn fresh per sample per epoch and the run is
// reproducible (and resumable) for a fixed seed regardless of scheduling.
inline TrainResult train(Network& net, AdamOptimizer& adam, const ItemFn& item_fn,
                         int train_count, const std::vector<TrainItem>& val_items,
                         const TrainConfig& cfg, const LossWeights& effective,
                         int start_epoch = 0, const EpochCallback& callback = {}) {
  cfg.validate();
  if (train_count < 1) throw ConfigError("train: empty dataset");
  TrainResult result;
  std::vector<int> order(train_count);
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < train_count; ++i) order[i] = i;
    Rng shuffle_rng = Rng::stream(cfg.seed ^ 0x73687566666cull, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    LossBreakdown epoch_loss;
    int steps = 0;
    for (int begin = 0; begin < train_count; begin += cfg.batch_size) {
      const int B = std::min(cfg.batch_size, train_count - begin);
      std::vector<TrainItem> storage(B);
#pragma omp parallel for schedule(static)
      for (int b = 0; b < B; ++b) storage[b] = item_fn(epoch, order[begin + b]);
      std::vector<const TrainItem*> batch(B);
      for (int b = 0; b < B; ++b) batch[b] = &storage[b];
      const LossBreakdown bd = train_step(net, adam, batch, effective);
      epoch_loss.l1 += bd.l1;
      epoch_loss.l2 += bd.l2;
      epoch_loss.l3_dice += bd.l3_dice;
      epoch_loss.l3_mse += bd.l3_mse;
      epoch_loss.total += bd.total;
      ++steps;
    }
    const double inv = 1.0 / std::max(steps, 1);
    epoch_loss.l1 *= inv;
    epoch_loss.l2 *= inv;
    epoch_loss.l3_dice *= inv;
    epoch_loss.l3_mse *= inv;
    epoch_loss.total *= inv;

    EpochStats stats;
    stats.epoch = epoch;
    stats.train = epoch_loss;
    auto [val_loss, val_dsc] = evaluate_items(net, val_items, effective, cfg.batch_size);
    stats.val = val_loss;
    stats.val_dsc_lv = val_dsc;
    if (!val_items.empty() && val_loss.total < result.best_val) {
      result.best_val = val_loss.total;
      result.best_epoch = epoch;
      stats.is_best = true;
      CheckpointMeta meta;
      meta.config = net.config();
      meta.epoch = epoch;
      meta.best_val = result.best_val;
      meta.seed = cfg.seed;
      result.best_state = encode_checkpoint(net, adam, meta);
    }
    result.history.push_back(stats);
    if (callback) callback(stats);
  }
  return result;
}

// Convert one prediction to landmarks: denormalize pose, reconstruct the
// shape vector from the coefficients, and apply the pose.
inline LandmarkShape predict_to_landmarks(std::span<const float> coeffs,
                                          std::span<const float> pose_norm,
                                          const StatShapeModel& model, const GridSpec& grid) {
  ShapeCoefficients b(static_cast<Eigen::Index>(coeffs.size()));
  for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = coeffs[static_cast<std::size_t>(i)];
  const PoseParams pose = denormalize_pose_params(
      {pose_norm[0], pose_norm[1], pose_norm[2]}, grid);
  const ShapeVector s = reconstruct(b, model, static_cast<int>(b.size()));
  return apply_pose(s, pose);
}

}  // namespace shapeseg
