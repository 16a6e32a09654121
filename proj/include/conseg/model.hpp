// conseg/model.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Encoder-decoder segmentation network with a residual two-path block
// design. The encoder halves resolution four times; the main decoder mirrors
// it with skip concatenations and ends in a sigmoid segmentation head. An
// optional auxiliary decoder decodes a (perturbed) latent map without skips
// and carries a second sigmoid head that reconstructs the input image.
//
// Forward and backward passes are explicit. The backward entry points must
// be called in reverse order of their matching train-mode forward calls,
// since each layer keeps exactly one set of caches.

#ifndef CONSEG_MODEL_HPP_
#define CONSEG_MODEL_HPP_

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "conseg/errors.hpp"
#include "conseg/layers.hpp"
#include "conseg/tensor.hpp"

namespace conseg {

struct ArchConfig {
  int input_size = 448;
  int input_channels = 3;
  // stem depth followed by the four encoder block depths
  std::vector<int> block_depths = {21, 42, 84, 168, 336};
  int num_classes = 2;
  bool with_aux = true;
};

inline void Validate(const ArchConfig &c) {
  if (c.input_size <= 0 || c.input_size % 16 != 0)
    throw ConfigError("input_size: must be positive and divisible by 16, got " +
                      std::to_string(c.input_size));
  if (c.input_channels < 1)
    throw ConfigError("input_channels: must be >= 1");
  if (c.block_depths.size() != 5)
    throw ConfigError("block_depths: expected 5 entries, got " +
                      std::to_string(c.block_depths.size()));
  for (int d : c.block_depths)
    if (d < 1) throw ConfigError("block_depths: entries must be >= 1");
  if (c.num_classes != 2)
    throw ConfigError(
        "num_classes: only the binary task (2, single sigmoid channel) is "
        "supported");
}

// Latent embedding of one batch plus the encoder-block outputs kept for the
// skip connections. skips[k] lives at scale 1/2^(k+1); skips[3] is z itself.
template <typename T>
struct LatentFeature {
  Tensor<T> z;
  std::array<Tensor<T>, 4> skips;
};

enum class Scope { kEncoder, kMainDecoder, kAuxDecoder, kInference, kAll };

namespace detail {

// Residual downsampling block: {1x1 conv stride 2} + {3x3 conv ->
// depthwise-separable conv -> 2x2 max-pool}, summed.
template <typename T>
class EncoderBlock {
 public:
  EncoderBlock(int in_ch, int out_ch, const std::string &name)
      : proj_(in_ch, out_ch, 1, 2, Act::kRelu, name + ".proj"),
        conv_(in_ch, out_ch, 3, 1, Act::kRelu, name + ".conv"),
        dw_(out_ch, name + ".dw"),
        pw_(out_ch, out_ch, 1, 1, Act::kRelu, name + ".pw"),
        pool_(name + ".pool") {}

  Tensor<T> Forward(const Tensor<T> &x, bool train) {
    Tensor<T> a = proj_.Forward(x, train);
    Tensor<T> b = pool_.Forward(
        pw_.Forward(dw_.Forward(conv_.Forward(x, train), train), train), train);
    return Add(a, b);
  }

  Tensor<T> Backward(const Tensor<T> &dy) {
    Tensor<T> da = proj_.Backward(dy);
    Tensor<T> db = conv_.Backward(dw_.Backward(pw_.Backward(pool_.Backward(dy))));
    return Add(da, db);
  }

  void CollectParams(std::vector<ParamRef<T>> *out) {
    proj_.CollectParams(out);
    conv_.CollectParams(out);
    dw_.CollectParams(out);
    pw_.CollectParams(out);
  }

 private:
  Conv2d<T> proj_, conv_;
  DepthwiseConv2d<T> dw_;
  Conv2d<T> pw_;
  MaxPool2<T> pool_;
};

// Residual upsampling block: {2x upsample -> 1x1 conv} + {3x3 conv ->
// depthwise-separable conv -> 2x upsample}, summed.
template <typename T>
class DecoderBlock {
 public:
  DecoderBlock(int in_ch, int out_ch, const std::string &name)
      : proj_(in_ch, out_ch, 1, 1, Act::kRelu, name + ".proj"),
        conv_(in_ch, out_ch, 3, 1, Act::kRelu, name + ".conv"),
        dw_(out_ch, name + ".dw"),
        pw_(out_ch, out_ch, 1, 1, Act::kRelu, name + ".pw") {}

  Tensor<T> Forward(const Tensor<T> &x, bool train) {
    Tensor<T> a = proj_.Forward(up_a_.Forward(x), train);
    Tensor<T> b = up_b_.Forward(
        pw_.Forward(dw_.Forward(conv_.Forward(x, train), train), train));
    return Add(a, b);
  }

  Tensor<T> Backward(const Tensor<T> &dy) {
    Tensor<T> da = up_a_.Backward(proj_.Backward(dy));
    Tensor<T> db = conv_.Backward(
        dw_.Backward(pw_.Backward(up_b_.Backward(dy))));
    return Add(da, db);
  }

  void CollectParams(std::vector<ParamRef<T>> *out) {
    proj_.CollectParams(out);
    conv_.CollectParams(out);
    dw_.CollectParams(out);
    pw_.CollectParams(out);
  }

 private:
  Conv2d<T> proj_, conv_;
  DepthwiseConv2d<T> dw_;
  Conv2d<T> pw_;
  Upsample2<T> up_a_, up_b_;
};

}  // namespace detail

template <typename T = float>
class ResSepNet {
 public:
  struct MainOut {
    Tensor<T> y;  // segmentation probability map, shape (B,1,H,W)
    LatentFeature<T> latent;
  };
  struct AuxOut {
    Tensor<T> y_aux;  // (B,1,H,W)
    Tensor<T> x_hat;  // (B,input_channels,H,W)
  };

  explicit ResSepNet(const ArchConfig &cfg) : cfg_(cfg) {
    Validate(cfg_);
    const auto &d = cfg_.block_depths;
    stem_ = std::make_unique<Conv2d<T>>(cfg_.input_channels, d[0], 3, 1,
                                        Act::kRelu, "enc.stem");
    for (int k = 0; k < 4; ++k)
      enc_[k] = std::make_unique<detail::EncoderBlock<T>>(
          d[k], d[k + 1], "enc.block" + std::to_string(k + 1));

    // decoder block k halves the channel count and doubles resolution;
    // blocks 2..4 consume the concatenation of the previous decoder output
    // with the same-resolution encoder feature, hence the doubled input
    dec_[0] = std::make_unique<detail::DecoderBlock<T>>(
        d[4], d[3], "main.block1");
    dec_[1] = std::make_unique<detail::DecoderBlock<T>>(
        2 * d[3], d[2], "main.block2");
    dec_[2] = std::make_unique<detail::DecoderBlock<T>>(
        2 * d[2], d[1], "main.block3");
    dec_[3] = std::make_unique<detail::DecoderBlock<T>>(
        2 * d[1], d[0], "main.block4");
    fuse_ = std::make_unique<Conv2d<T>>(d[0], d[0], 3, 1, Act::kRelu,
                                        "main.fuse");
    head_ = std::make_unique<Conv2d<T>>(d[0], 1, 1, 1, Act::kSigmoid,
                                        "main.head");

    if (cfg_.with_aux) {
      aux_[0] = std::make_unique<detail::DecoderBlock<T>>(d[4], d[3],
                                                          "aux.block1");
      aux_[1] = std::make_unique<detail::DecoderBlock<T>>(d[3], d[2],
                                                          "aux.block2");
      aux_[2] = std::make_unique<detail::DecoderBlock<T>>(d[2], d[1],
                                                          "aux.block3");
      aux_[3] = std::make_unique<detail::DecoderBlock<T>>(d[1], d[0],
                                                          "aux.block4");
      aux_fuse_ = std::make_unique<Conv2d<T>>(d[0], d[0], 3, 1, Act::kRelu,
                                              "aux.fuse");
      aux_seg_ = std::make_unique<Conv2d<T>>(d[0], 1, 1, 1, Act::kSigmoid,
                                             "aux.seg");
      aux_recon_ = std::make_unique<Conv2d<T>>(
          d[0], cfg_.input_channels, 1, 1, Act::kSigmoid, "aux.recon");
    }
  }

  const ArchConfig &config() const { return cfg_; }
  int LatentChannels() const { return cfg_.block_depths[4]; }
  int LatentSize() const { return cfg_.input_size / 16; }

  LatentFeature<T> ForwardEncoder(const Tensor<T> &x, bool train) {
    if (x.c() != cfg_.input_channels || x.h() != cfg_.input_size ||
        x.w() != cfg_.input_size)
      throw InputError("encoder input: expected (" +
                       std::to_string(cfg_.input_channels) + ", " +
                       std::to_string(cfg_.input_size) + ", " +
                       std::to_string(cfg_.input_size) + "), got " +
                       x.ShapeString());
    LatentFeature<T> lat;
    Tensor<T> cur = stem_->Forward(x, train);
    for (int k = 0; k < 4; ++k) {
      cur = enc_[k]->Forward(cur, train);
      lat.skips[k] = cur;
    }
    lat.z = cur;
    return lat;
  }

  Tensor<T> ForwardMainDecoder(const LatentFeature<T> &lat, bool train) {
    Tensor<T> u = dec_[0]->Forward(lat.z, train);
    u = dec_[1]->Forward(ConcatChannels(u, lat.skips[2]), train);
    u = dec_[2]->Forward(ConcatChannels(u, lat.skips[1]), train);
    u = dec_[3]->Forward(ConcatChannels(u, lat.skips[0]), train);
    return head_->Forward(fuse_->Forward(u, train), train);
  }

  MainOut ForwardMain(const Tensor<T> &x, bool train = false) {
    MainOut out;
    out.latent = ForwardEncoder(x, train);
    out.y = ForwardMainDecoder(out.latent, train);
    return out;
  }

  AuxOut ForwardAux(const Tensor<T> &z_perturbed, bool train = false) {
    if (!cfg_.with_aux)
      throw CapabilityError("auxiliary decoder requested on a model built "
                            "without one");
    if (z_perturbed.c() != LatentChannels() ||
        z_perturbed.h() != LatentSize() || z_perturbed.w() != LatentSize())
      throw InputError("aux input: latent shape mismatch, got " +
                       z_perturbed.ShapeString());
    Tensor<T> u = z_perturbed;
    for (int k = 0; k < 4; ++k) u = aux_[k]->Forward(u, train);
    u = aux_fuse_->Forward(u, train);
    AuxOut out;
    out.y_aux = aux_seg_->Forward(u, train);
    out.x_hat = aux_recon_->Forward(u, train);
    return out;
  }

  // Full backward through main decoder and encoder, including the skip
  // paths. Requires a preceding ForwardMain(..., train=true).
  void BackwardMain(const Tensor<T> &dy) {
    const auto &d = cfg_.block_depths;
    Tensor<T> g = fuse_->Backward(head_->Backward(dy));
    g = dec_[3]->Backward(g);
    Tensor<T> du, dskip0, dskip1, dskip2;
    SplitChannels(g, d[1], &du, &dskip0);
    g = dec_[2]->Backward(du);
    SplitChannels(g, d[2], &du, &dskip1);
    g = dec_[1]->Backward(du);
    SplitChannels(g, d[3], &du, &dskip2);
    Tensor<T> dz = dec_[0]->Backward(du);
    BackwardEncoderImpl(dz, &dskip0, &dskip1, &dskip2);
  }

  // Backward through the auxiliary decoder only; returns the gradient
  // w.r.t. the (perturbed) latent input. Does not touch the encoder.
  Tensor<T> BackwardAux(const Tensor<T> &dy_aux, const Tensor<T> &dx_hat) {
    if (!cfg_.with_aux)
      throw CapabilityError("auxiliary decoder requested on a model built "
                            "without one");
    Tensor<T> g = Add(aux_seg_->Backward(dy_aux), aux_recon_->Backward(dx_hat));
    g = aux_fuse_->Backward(g);
    for (int k = 3; k >= 0; --k) g = aux_[k]->Backward(g);
    return g;
  }

  // Backward through the encoder alone (skip gradients zero); used by the
  // unsupervised path after BackwardAux + the perturbation backward.
  void BackwardEncoder(const Tensor<T> &dz) {
    BackwardEncoderImpl(dz, nullptr, nullptr, nullptr);
  }

  std::vector<ParamRef<T>> Params(Scope scope) {
    std::vector<ParamRef<T>> out;
    const bool enc = scope == Scope::kEncoder || scope == Scope::kInference ||
                     scope == Scope::kAll;
    const bool main = scope == Scope::kMainDecoder ||
                      scope == Scope::kInference || scope == Scope::kAll;
    const bool aux = (scope == Scope::kAuxDecoder || scope == Scope::kAll) &&
                     cfg_.with_aux;
    if (enc) {
      stem_->CollectParams(&out);
      for (auto &b : enc_) b->CollectParams(&out);
    }
    if (main) {
      for (auto &b : dec_) b->CollectParams(&out);
      fuse_->CollectParams(&out);
      head_->CollectParams(&out);
    }
    if (aux) {
      for (auto &b : aux_) b->CollectParams(&out);
      aux_fuse_->CollectParams(&out);
      aux_seg_->CollectParams(&out);
      aux_recon_->CollectParams(&out);
    }
    return out;
  }

  std::size_t CountParameters(Scope scope) {
    std::size_t n = 0;
    for (const auto &p : Params(scope)) n += p.value->size();
    return n;
  }

  void ZeroGrads() {
    for (auto &p : Params(Scope::kAll))
      std::fill(p.grad->begin(), p.grad->end(), T(0));
  }

  // Binary checkpoint plus a human-readable sidecar manifest. The parameter
  // payload is the concatenation of all parameter vectors in the fixed
  // Params(kAll) traversal order.
  void Save(const std::string &path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open checkpoint for writing: " + path);
    const char magic[8] = {'C', 'S', 'G', 'C', 'K', 'P', 'T', '1'};
    f.write(magic, 8);
    auto put_i32 = [&f](std::int32_t v) {
      f.write(reinterpret_cast<const char *>(&v), 4);
    };
    put_i32(cfg_.input_size);
    put_i32(cfg_.input_channels);
    for (int d : cfg_.block_depths) put_i32(d);
    put_i32(cfg_.num_classes);
    put_i32(cfg_.with_aux ? 1 : 0);
    put_i32(static_cast<std::int32_t>(sizeof(T)));
    auto params = Params(Scope::kAll);
    const std::uint64_t count = params.size();
    f.write(reinterpret_cast<const char *>(&count), 8);
    for (const auto &p : params) {
      const std::uint64_t n = p.value->size();
      f.write(reinterpret_cast<const char *>(&n), 8);
      f.write(reinterpret_cast<const char *>(p.value->data()),
              static_cast<std::streamsize>(n * sizeof(T)));
    }
    if (!f) throw InputError("checkpoint write failed: " + path);
    f.close();
    WriteManifest(path + ".manifest.txt");
  }

  static ResSepNet<T> Load(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "CSGCKPT1")
      throw InputError("not a checkpoint file: " + path);
    auto get_i32 = [&f, &path]() {
      std::int32_t v;
      f.read(reinterpret_cast<char *>(&v), 4);
      if (!f) throw InputError("truncated checkpoint: " + path);
      return v;
    };
    ArchConfig cfg;
    cfg.input_size = get_i32();
    cfg.input_channels = get_i32();
    cfg.block_depths.resize(5);
    for (int &d : cfg.block_depths) d = get_i32();
    cfg.num_classes = get_i32();
    cfg.with_aux = get_i32() != 0;
    if (get_i32() != static_cast<std::int32_t>(sizeof(T)))
      throw InputError("checkpoint scalar width mismatch: " + path);
    ResSepNet<T> net(cfg);
    auto params = net.Params(Scope::kAll);
    std::uint64_t count;
    f.read(reinterpret_cast<char *>(&count), 8);
    if (!f || count != params.size())
      throw InputError("checkpoint parameter list mismatch: " + path);
    for (auto &p : params) {
      std::uint64_t n;
      f.read(reinterpret_cast<char *>(&n), 8);
      if (!f || n != p.value->size())
        throw InputError("checkpoint parameter size mismatch: " + path);
      f.read(reinterpret_cast<char *>(p.value->data()),
             static_cast<std::streamsize>(n * sizeof(T)));
      if (!f) throw InputError("truncated checkpoint: " + path);
    }
    return net;
  }

 private:
  void BackwardEncoderImpl(const Tensor<T> &dz, const Tensor<T> *dskip0,
                           const Tensor<T> *dskip1, const Tensor<T> *dskip2) {
    Tensor<T> g = enc_[3]->Backward(dz);
    if (dskip2) g = Add(g, *dskip2);
    g = enc_[2]->Backward(g);
    if (dskip1) g = Add(g, *dskip1);
    g = enc_[1]->Backward(g);
    if (dskip0) g = Add(g, *dskip0);
    g = enc_[0]->Backward(g);
    stem_->Backward(g);
  }

  void WriteManifest(const std::string &path) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open manifest for writing: " + path);
    f << "input_size=" << cfg_.input_size << "\n";
    f << "input_channels=" << cfg_.input_channels << "\n";
    f << "block_depths=";
    for (std::size_t i = 0; i < cfg_.block_depths.size(); ++i)
      f << (i ? "," : "") << cfg_.block_depths[i];
    f << "\n";
    f << "num_classes=" << cfg_.num_classes << "\n";
    f << "with_aux=" << (cfg_.with_aux ? "true" : "false") << "\n";
    f << "params_encoder=" << CountParameters(Scope::kEncoder) << "\n";
    f << "params_main_decoder=" << CountParameters(Scope::kMainDecoder)
      << "\n";
    f << "params_aux_decoder=" << CountParameters(Scope::kAuxDecoder) << "\n";
    f << "params_inference=" << CountParameters(Scope::kInference) << "\n";
    f << "params_all=" << CountParameters(Scope::kAll) << "\n";
  }

  ArchConfig cfg_;
  std::unique_ptr<Conv2d<T>> stem_;
  std::array<std::unique_ptr<detail::EncoderBlock<T>>, 4> enc_;
  std::array<std::unique_ptr<detail::DecoderBlock<T>>, 4> dec_;
  std::unique_ptr<Conv2d<T>> fuse_, head_;
  std::array<std::unique_ptr<detail::DecoderBlock<T>>, 4> aux_;
  std::unique_ptr<Conv2d<T>> aux_fuse_, aux_seg_, aux_recon_;
};

}  // namespace conseg

#endif  // CONSEG_MODEL_HPP_
