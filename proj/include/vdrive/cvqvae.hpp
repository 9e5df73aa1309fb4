#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdrive/graph.hpp"
#include "vdrive/nn.hpp"
#include "vdrive/scene.hpp"

namespace vdrive::cvq {

struct CvqVaeConfig {
    std::size_t k = 32;             // codebook size
    std::size_t dc = 16;            // code dimension
    std::size_t patch = 8;          // patch edge; latent grid is (h/patch) x (w/patch)
    std::size_t hidden = 64;        // encoder/decoder width
    double commitment_beta = 0.25;  // commitment cost (loss-side beta)
    double lr = 2e-3;
    std::size_t steps = 2000;
    std::size_t batch = 8;
    std::size_t dead_code_steps = 200;  // reseed codes unused this long
    int token_base = 4;                 // reserved specials below the code tokens

    void validate() const {
        if (k < 1) throw ValidationError("cvqvae: K must be >= 1");
        if (!(commitment_beta > 0)) throw ValidationError("cvqvae: commitment beta must be > 0");
        if (patch < 1 || dc < 1 || hidden < 1) throw ValidationError("cvqvae: bad dims");
    }
};

struct Codebook {
    Tensor codes;  // K x Dc
    std::vector<std::uint64_t> usage_counts;

    std::size_t k() const { return codes.dims[0]; }
    std::size_t dc() const { return codes.dims[1]; }
};

struct LatentGrid {
    Tensor z_e;               // cells x Dc
    Tensor z_q;               // cells x Dc, rows copied from the codebook
    std::vector<int> indices;  // cells, argmin code per cell
};

// ---- patch plumbing (templated so the loss builders run in f64 too) -------

// Stamps trajectory waypoints into a binary h x w channel.
template <class S>
TensorT<S> rasterize_trajectory(const std::vector<scene::Point>& traj, std::size_t h, std::size_t w) {
    TensorT<S> ch({h, w});
    for (const auto& p : traj) {
        if (p[0] < 0 || p[1] < 0) continue;
        std::size_t x = static_cast<std::size_t>(p[0]);
        std::size_t y = static_cast<std::size_t>(p[1]);
        if (x < w && y < h) ch.data[y * w + x] = S(1);
    }
    return ch;
}

// Encoder input: per patch, image pixels then trajectory-channel pixels
// (cells x 2*patch^2). `image` is h x w x c with c = 1.
template <class S>
TensorT<S> encoder_patches(const TensorT<S>& image, const TensorT<S>& traj_channel, std::size_t patch) {
    if (image.rank() != 3 || image.dims[2] != 1) {
        throw ValidationError("cvqvae: image must be HxWx1, got dims " + dims_to_string(image.dims));
    }
    const std::size_t h = image.dims[0], w = image.dims[1];
    if (traj_channel.dims != std::vector<std::size_t>{h, w}) {
        throw ValidationError("cvqvae: trajectory channel dims " + dims_to_string(traj_channel.dims) +
                              " do not match image " + dims_to_string(image.dims));
    }
    if (h % patch != 0 || w % patch != 0) {
        throw ValidationError("cvqvae: patch size must divide the grid");
    }
    const std::size_t gh = h / patch, gw = w / patch, pp = patch * patch;
    TensorT<S> out({gh * gw, 2 * pp});
    for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            std::size_t cell = gy * gw + gx;
            for (std::size_t py = 0; py < patch; ++py) {
                for (std::size_t px = 0; px < patch; ++px) {
                    std::size_t y = gy * patch + py, x = gx * patch + px;
                    out.data[cell * 2 * pp + py * patch + px] = image.data[(y * w + x)];
                    out.data[cell * 2 * pp + pp + py * patch + px] = traj_channel.data[y * w + x];
                }
            }
        }
    }
    return out;
}

// One grid per patch (cells x patch^2); used for decoder conditioning and
// for patch-major segmentation targets.
template <class S>
TensorT<S> grid_patches(const TensorT<S>& grid, std::size_t patch) {
    const std::size_t h = grid.dims[0], w = grid.dims[1];
    const std::size_t gh = h / patch, gw = w / patch, pp = patch * patch;
    TensorT<S> out({gh * gw, pp});
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t py = 0; py < patch; ++py)
                for (std::size_t px = 0; px < patch; ++px)
                    out.data[(gy * gw + gx) * pp + py * patch + px] =
                        grid.data[(gy * patch + py) * w + gx * patch + px];
    return out;
}

// ---- model ----------------------------------------------------------------

// Parameter layout; init_params registers in exactly this order.
enum ParamIx : std::size_t {
    kEncW1 = 0, kEncB1, kEncW2, kEncB2, kCodebook, kDecW1, kDecB1, kDecW2, kDecB2,
    kParamCount
};

template <class S>
nn::ParamStoreT<S> init_params_t(const CvqVaeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t in = 2 * cfg.patch * cfg.patch;
    const std::size_t pp = cfg.patch * cfg.patch;
    nn::ParamStoreT<S> p;
    p.add("enc.w1", nn::xavier<S>(rng, in, cfg.hidden));
    p.add("enc.b1", nn::zeros<S>({cfg.hidden}));
    p.add("enc.w2", nn::xavier<S>(rng, cfg.hidden, cfg.dc));
    p.add("enc.b2", nn::zeros<S>({cfg.dc}));
    p.add("codebook", nn::gaussian<S>(rng, {cfg.k, cfg.dc}, 0.5));
    p.add("dec.w1", nn::xavier<S>(rng, cfg.dc + pp, cfg.hidden));
    p.add("dec.b1", nn::zeros<S>({cfg.hidden}));
    p.add("dec.w2", nn::xavier<S>(rng, cfg.hidden, pp));
    p.add("dec.b2", nn::zeros<S>({pp}));
    return p;
}

inline nn::ParamStore init_params(const CvqVaeConfig& cfg, std::uint64_t seed) {
    return init_params_t<float>(cfg, seed);
}

// z_e: (cells x 2p^2) -> (cells x Dc)
template <class S>
typename ad::GraphT<S>::NodeId build_encoder(ad::GraphT<S>& g,
                                             const std::vector<typename ad::GraphT<S>::NodeId>& ids,
                                             typename ad::GraphT<S>::NodeId patches) {
    auto h = g.relu(nn::linear(g, patches, ids[kEncW1], ids[kEncB1]));
    return nn::linear(g, h, ids[kEncW2], ids[kEncB2]);
}

// decoded probabilities: concat(z_q_st, traj patches) -> (cells x patch^2)
template <class S>
typename ad::GraphT<S>::NodeId build_decoder(ad::GraphT<S>& g,
                                             const std::vector<typename ad::GraphT<S>::NodeId>& ids,
                                             typename ad::GraphT<S>::NodeId z_q_st,
                                             typename ad::GraphT<S>::NodeId traj_patches) {
    auto x = g.concat({z_q_st, traj_patches}, 1);
    auto h = g.relu(nn::linear(g, x, ids[kDecW1], ids[kDecB1]));
    return g.sigmoid(nn::linear(g, h, ids[kDecW2], ids[kDecB2]));
}

// Nearest code per row of z_e (squared distance, lowest index on ties).
template <class S>
std::vector<int> nearest_code_indices(const TensorT<S>& z_e, const TensorT<S>& codes) {
    if (z_e.dims.back() != codes.dims[1]) {
        throw ValidationError("quantize: Dc mismatch, z_e " + dims_to_string(z_e.dims) + " vs codebook " +
                              dims_to_string(codes.dims));
    }
    const std::size_t cells = z_e.dims[0], dc = codes.dims[1], k = codes.dims[0];
    std::vector<int> idx(cells, 0);
    for (std::size_t c = 0; c < cells; ++c) {
        double best = -1.0;
        int best_k = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double dist = 0.0;
            for (std::size_t d = 0; d < dc; ++d) {
                double diff = static_cast<double>(z_e.data[c * dc + d]) -
                              static_cast<double>(codes.data[j * dc + d]);
                dist += diff * diff;
            }
            if (best < 0.0 || dist < best) {
                best = dist;
                best_k = static_cast<int>(j);
            }
        }
        idx[c] = best_k;
    }
    return idx;
}

// Spec-facing quantization: fills z_q/indices and bumps usage counts.
LatentGrid quantize(const Tensor& z_e, Codebook& codebook);

struct VqLossIds {
    std::size_t total, recon, codebook_term, commitment_term;
};

// Eq-style three-term loss on an existing graph. `z_q` must be an embedding
// of the codebook so the codebook term reaches the codes; the straight-through
// path for the decoder is built separately (see build_straight_through).
template <class S>
VqLossIds build_vq_loss(ad::GraphT<S>& g, typename ad::GraphT<S>::NodeId z_e,
                        typename ad::GraphT<S>::NodeId z_q, typename ad::GraphT<S>::NodeId decoded,
                        typename ad::GraphT<S>::NodeId target, double commitment_beta) {
    const auto& tv = g.value(target);
    for (auto v : tv.data) {
        if (v != 0 && v != 1) throw ValidationError("cvqvae loss: non-binary target");
    }
    auto recon = g.sum(g.bce(decoded, target));
    auto cb_diff = g.sub(z_q, g.stop_gradient(z_e));
    auto codebook_term = g.sum(g.mul(cb_diff, cb_diff));
    auto cm_diff = g.sub(z_e, g.stop_gradient(z_q));
    auto commitment_term = g.scale(g.sum(g.mul(cm_diff, cm_diff)), commitment_beta);
    auto total = g.add(g.add(recon, codebook_term), commitment_term);
    return {total, recon, codebook_term, commitment_term};
}

// z_e + sg(z_q - z_e): forwards z_q, routes reconstruction gradient to z_e.
template <class S>
typename ad::GraphT<S>::NodeId build_straight_through(ad::GraphT<S>& g,
                                                      typename ad::GraphT<S>::NodeId z_e,
                                                      typename ad::GraphT<S>::NodeId z_q) {
    return g.add(z_e, g.stop_gradient(g.sub(z_q, z_e)));
}

// ---- inference / training ---------------------------------------------------

// Deterministic encode of one scene with frozen parameters.
Tensor encode(const scene::SceneSample& s, const nn::ParamStore& params, const CvqVaeConfig& cfg);
Tensor encode(const Tensor& image, const std::vector<scene::Point>& traj, const nn::ParamStore& params,
              const CvqVaeConfig& cfg);

// Flattened token ids in [token_base, token_base + K).
std::vector<int> tokens_for_scene(const scene::SceneSample& s, const nn::ParamStore& params,
                                  const CvqVaeConfig& cfg);

// Decoded segmentation probabilities (h x w) for a scene.
Tensor decode_scene(const scene::SceneSample& s, const nn::ParamStore& params, const CvqVaeConfig& cfg);

struct TrainMetrics {
    std::size_t step = 0;
    double recon_per_pixel = 0.0;
    double codebook_term = 0.0;
    double commitment_term = 0.0;
    double perplexity = 0.0;
};

struct TrainResult {
    nn::ParamStore params;
    std::vector<TrainMetrics> log;
    double final_recon_per_pixel = 0.0;
    double final_perplexity = 0.0;
    std::vector<std::uint64_t> usage_counts;
};

TrainResult train(const std::vector<scene::SceneSample>& scenes, const CvqVaeConfig& cfg,
                  std::uint64_t seed);

// Empirical usage perplexity: exp(entropy), in [1, K].
double perplexity(const std::vector<std::uint64_t>& counts);

std::size_t latent_cells(const CvqVaeConfig& cfg, std::size_t h, std::size_t w);

}  // namespace vdrive::cvq
