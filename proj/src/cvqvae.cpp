#include "vdrive/cvqvae.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace vdrive::cvq {

using ad::Graph;
using NodeId = Graph::NodeId;

std::size_t latent_cells(const CvqVaeConfig& cfg, std::size_t h, std::size_t w) {
    return (h / cfg.patch) * (w / cfg.patch);
}

LatentGrid quantize(const Tensor& z_e, Codebook& codebook) {
    LatentGrid out;
    out.z_e = z_e;
    out.indices = nearest_code_indices(z_e, codebook.codes);
    const std::size_t dc = codebook.dc();
    out.z_q = Tensor({z_e.dims[0], dc});
    if (codebook.usage_counts.size() != codebook.k()) codebook.usage_counts.assign(codebook.k(), 0);
    for (std::size_t c = 0; c < out.indices.size(); ++c) {
        std::size_t j = static_cast<std::size_t>(out.indices[c]);
        ++codebook.usage_counts[j];
        for (std::size_t d = 0; d < dc; ++d) out.z_q.data[c * dc + d] = codebook.codes.data[j * dc + d];
    }
    return out;
}

double perplexity(const std::vector<std::uint64_t>& counts) {
    double total = 0;
    for (auto c : counts) total += static_cast<double>(c);
    if (total == 0) return 1.0;
    double entropy = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / total;
        entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

namespace {

struct ScenePatches {
    Tensor enc;      // cells x 2p^2
    Tensor traj;     // cells x p^2
    Tensor target;   // cells x p^2 (patch-major segmentation target)
};

ScenePatches make_patches(const scene::SceneSample& s, const CvqVaeConfig& cfg) {
    if (s.trajectory.empty()) throw ValidationError("cvqvae: scene has no trajectory");
    auto traj_channel = rasterize_trajectory<float>(s.trajectory, s.image.dims[0], s.image.dims[1]);
    ScenePatches out;
    out.enc = encoder_patches(s.image, traj_channel, cfg.patch);
    out.traj = grid_patches(traj_channel, cfg.patch);
    out.target = grid_patches(s.seg_target.to_tensor(), cfg.patch);
    return out;
}

}  // namespace

Tensor encode(const Tensor& image, const std::vector<scene::Point>& traj, const nn::ParamStore& params,
              const CvqVaeConfig& cfg) {
    auto traj_channel = rasterize_trajectory<float>(traj, image.dims[0], image.dims[1]);
    Tensor patches = encoder_patches(image, traj_channel, cfg.patch);
    Graph g;
    auto ids = params.bind(g);
    auto z_e = build_encoder<float>(g, ids, g.constant(patches));
    return g.value(z_e);
}

Tensor encode(const scene::SceneSample& s, const nn::ParamStore& params, const CvqVaeConfig& cfg) {
    return encode(s.image, s.trajectory, params, cfg);
}

std::vector<int> tokens_for_scene(const scene::SceneSample& s, const nn::ParamStore& params,
                                  const CvqVaeConfig& cfg) {
    Tensor z_e = encode(s, params, cfg);
    auto idx = nearest_code_indices(z_e, params.at("codebook"));
    for (auto& i : idx) i += cfg.token_base;
    return idx;
}

Tensor decode_scene(const scene::SceneSample& s, const nn::ParamStore& params, const CvqVaeConfig& cfg) {
    auto patches = make_patches(s, cfg);
    Graph g;
    auto ids = params.bind(g);
    auto z_e = build_encoder<float>(g, ids, g.constant(patches.enc));
    auto indices = nearest_code_indices(g.value(z_e), params.at("codebook"));
    auto z_q = g.embedding(ids[kCodebook], indices);
    auto st = build_straight_through(g, z_e, z_q);
    auto probs = g.value(build_decoder<float>(g, ids, st, g.constant(patches.traj)));

    // patch-major -> h x w
    const std::size_t h = s.image.dims[0], w = s.image.dims[1];
    const std::size_t gw = w / cfg.patch, pp = cfg.patch * cfg.patch;
    Tensor img({h, w});
    for (std::size_t cell = 0; cell < probs.dims[0]; ++cell) {
        std::size_t gy = cell / gw, gx = cell % gw;
        for (std::size_t p = 0; p < pp; ++p) {
            std::size_t y = gy * cfg.patch + p / cfg.patch;
            std::size_t x = gx * cfg.patch + p % cfg.patch;
            img.data[y * w + x] = probs.data[cell * pp + p];
        }
    }
    return img;
}

TrainResult train(const std::vector<scene::SceneSample>& scenes, const CvqVaeConfig& cfg,
                  std::uint64_t seed) {
    cfg.validate();
    if (scenes.empty()) throw ValidationError("cvqvae train: empty dataset");

    TrainResult result;
    result.params = init_params(cfg, derive_seed(seed, 0));
    Rng rng(derive_seed(seed, 1));
    nn::Adam opt(cfg.lr);

    std::vector<ScenePatches> cache;
    cache.reserve(scenes.size());
    for (const auto& s : scenes) cache.push_back(make_patches(s, cfg));

    const std::size_t pixels_per_scene = scenes[0].image.dims[0] * scenes[0].image.dims[1];
    std::vector<std::uint64_t> usage(cfg.k, 0);
    std::vector<std::size_t> last_used(cfg.k, 0);
    std::deque<std::vector<float>> recent_cells;  // reservoir for dead-code reseeding

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> batch(std::min(cfg.batch, scenes.size()));
        for (auto& b : batch) b = rng.uniform_index(scenes.size());

        Graph g;
        auto ids = result.params.bind(g);
        std::vector<NodeId> enc_in, traj_in, target_in;
        for (auto b : batch) {
            enc_in.push_back(g.constant(cache[b].enc));
            traj_in.push_back(g.constant(cache[b].traj));
            target_in.push_back(g.constant(cache[b].target));
        }
        auto patches = g.concat(enc_in, 0);
        auto traj = g.concat(traj_in, 0);
        auto target = g.concat(target_in, 0);

        auto z_e = build_encoder<float>(g, ids, patches);
        auto indices = nearest_code_indices(g.value(z_e), result.params.at("codebook"));
        auto z_q = g.embedding(ids[kCodebook], indices);
        auto st = build_straight_through(g, z_e, z_q);
        auto decoded = build_decoder<float>(g, ids, st, traj);
        auto loss = build_vq_loss(g, z_e, z_q, decoded, target, cfg.commitment_beta);

        double total = g.value(loss.total).data[0];
        if (!std::isfinite(total)) {
            throw TrainingDivergence("cvqvae train: non-finite loss at step " + std::to_string(step));
        }

        // batch usage, cumulative usage, reseed reservoir
        std::vector<std::uint64_t> batch_usage(cfg.k, 0);
        const auto& zev = g.value(z_e);
        for (std::size_t c = 0; c < indices.size(); ++c) {
            ++batch_usage[static_cast<std::size_t>(indices[c])];
            ++usage[static_cast<std::size_t>(indices[c])];
            last_used[static_cast<std::size_t>(indices[c])] = step;
            if (rng.bernoulli(0.02)) {
                std::vector<float> cell(cfg.dc);
                for (std::size_t d = 0; d < cfg.dc; ++d) cell[d] = zev.data[c * cfg.dc + d];
                recent_cells.push_back(std::move(cell));
                if (recent_cells.size() > 256) recent_cells.pop_front();
            }
        }

        g.backward(loss.total);
        auto grads = nn::collect_grads(g, ids);
        opt.step(result.params, grads);

        // reseed codes unused for cfg.dead_code_steps consecutive steps
        if (!recent_cells.empty()) {
            auto& codes = result.params.at("codebook");
            for (std::size_t j = 0; j < cfg.k; ++j) {
                if (step >= cfg.dead_code_steps && step - last_used[j] >= cfg.dead_code_steps) {
                    const auto& cell = recent_cells[rng.uniform_index(recent_cells.size())];
                    for (std::size_t d = 0; d < cfg.dc; ++d) codes.data[j * cfg.dc + d] = cell[d];
                    last_used[j] = step;
                }
            }
        }

        TrainMetrics m;
        m.step = step;
        m.recon_per_pixel =
            g.value(loss.recon).data[0] / static_cast<double>(batch.size() * pixels_per_scene);
        m.codebook_term = g.value(loss.codebook_term).data[0];
        m.commitment_term = g.value(loss.commitment_term).data[0];
        m.perplexity = perplexity(batch_usage);
        result.log.push_back(m);
    }

    // final full-dataset statistics with frozen parameters
    std::vector<std::uint64_t> final_usage(cfg.k, 0);
    double recon_sum = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        Graph g;
        auto ids = result.params.bind(g);
        auto z_e = build_encoder<float>(g, ids, g.constant(cache[i].enc));
        auto indices = nearest_code_indices(g.value(z_e), result.params.at("codebook"));
        for (int ix : indices) ++final_usage[static_cast<std::size_t>(ix)];
        auto z_q = g.embedding(ids[kCodebook], indices);
        auto st = build_straight_through(g, z_e, z_q);
        auto decoded = build_decoder<float>(g, ids, st, g.constant(cache[i].traj));
        auto recon = g.sum(g.bce(decoded, g.constant(cache[i].target)));
        recon_sum += g.value(recon).data[0];
    }
    result.final_recon_per_pixel = recon_sum / static_cast<double>(scenes.size() * pixels_per_scene);
    result.final_perplexity = perplexity(final_usage);
    result.usage_counts = std::move(final_usage);
    return result;
}

}  // namespace vdrive::cvq
