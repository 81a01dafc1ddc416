#include "gsinsert/appearance.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <future>
#include <string>
#include <vector>

#include "gsinsert/digest.hpp"
#include "gsinsert/errors.hpp"
#include "gsinsert/rng.hpp"

namespace gsinsert {

namespace {

std::string pose_key(const Camera& cam) { return camera_to_json(cam).dump(); }

void append_raw(std::string& buf, const void* data, size_t bytes) {
    buf.append(static_cast<const char*>(data), bytes);
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw SchemaViolation("embedding dimension mismatch: " + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()));
    }
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na < 1e-24 || nb < 1e-24) throw Degenerate("zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> embed_image(OracleBackend& backend, const RgbImage& img) {
    const OracleRequest req = make_embed_request(png_encode_rgb(img));
    return decode_embedding(query_validated(backend, req));
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

std::string dataset_digest(const RefDataset& dataset) {
    std::string buf;
    const int counts[2] = {dataset.n_rendered, dataset.n_reference};
    append_raw(buf, counts, sizeof(counts));
    for (const RefEntry& e : dataset.entries) {
        const int dims[2] = {e.image.width, e.image.height};
        append_raw(buf, dims, sizeof(dims));
        append_raw(buf, e.image.values.data(), e.image.values.size() * sizeof(double));
        buf += pose_key(e.pose);
        buf += e.is_reference ? '1' : '0';
    }
    return sha256_hex(buf);
}

void AppearanceConfig::validate() const {
    if (!std::isfinite(ratio) || ratio <= 0) throw ConfigError("ratio must be positive");
    if (n_views < 1) throw ConfigError("n_views must be >= 1");
    if (!std::isfinite(t_min) || t_min <= 0) throw ConfigError("t_min must be in (0, 1)");
    if (!std::isfinite(t_upper_start) || !std::isfinite(t_upper_end)) {
        throw ConfigError("timestep bounds must be finite");
    }
    if (t_upper_end < t_min || t_upper_start < t_upper_end || t_upper_start >= 1.0) {
        throw ConfigError("timestep bounds must satisfy t_min <= end <= start < 1");
    }
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (!std::isfinite(learning_rate) || learning_rate <= 0) {
        throw ConfigError("learning_rate must be positive");
    }
}

// ---------------------------------------------------------------------------
// Toy backend
// ---------------------------------------------------------------------------

ToyAppearanceBackend::ToyAppearanceBackend(double gain) : gain_(gain) {
    if (!std::isfinite(gain) || gain < 0) throw ConfigError("toy backend gain must be >= 0");
}

void ToyAppearanceBackend::fit(const RefDataset& dataset, const std::string& /*subject_prompt*/) {
    const std::string digest = dataset_digest(dataset);
    if (fitted_ && digest == digest_) return;  // idempotent per dataset digest
    const auto it = std::find_if(dataset.entries.begin(), dataset.entries.end(),
                                 [](const RefEntry& e) { return e.is_reference; });
    if (it == dataset.entries.end()) throw Degenerate("dataset has no reference entries");
    ref_image_ = it->image;
    ref_pose_key_ = pose_key(it->pose);
    digest_ = digest;
    fitted_ = true;
    ++fit_count_;
}

GuidanceResponse ToyAppearanceBackend::guide(const GuidanceQuery& query) {
    if (!fitted_) throw ConfigError("toy appearance backend queried before fit");
    if (!query.pose.has_value()) throw ConfigError("toy appearance backend requires a pose");
    GuidanceResponse resp;
    resp.predicted_noise = query.noise;
    if (gain_ > 0 && pose_key(*query.pose) == ref_pose_key_) {
        if (query.noisy_image.width != ref_image_.width ||
            query.noisy_image.height != ref_image_.height) {
            throw Degenerate("query image dimensions mismatch fitted reference");
        }
        const RgbImage x = vp_recover(query.noisy_image, query.noise, query.timestep);
        for (size_t i = 0; i < x.values.size(); ++i) {
            resp.predicted_noise.values[i] += gain_ * (x.values[i] - ref_image_.values[i]);
        }
    }
    for (const std::string& token : query.emphasized_tokens) {
        resp.attention_maps.emplace(
            token, MaskImage(query.noisy_image.width, query.noisy_image.height, 1.0));
    }
    return resp;
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Camera estimate_reference_pose(const GaussianScene& object, const RgbImage& i_o,
                               const std::vector<Camera>& views, OracleBackend& backend) {
    if (views.size() < 2) throw Degenerate("reference pose estimation needs >= 2 views");
    const std::vector<double> ref = embed_image(backend, i_o);
    size_t best_index = 0;
    double best_sim = -2.0;
    for (size_t i = 0; i < views.size(); ++i) {
        const std::vector<double> emb = embed_image(backend, render_preview(views[i], object));
        const double sim = cosine_similarity(emb, ref);
        if (sim > best_sim + 1e-12) {  // ties within 1e-12 keep the lower index
            best_sim = sim;
            best_index = i;
        }
    }
    return views[best_index];
}

RefDataset build_ref_dataset(const GaussianScene& object, const RgbImage& i_o,
                             const Camera& p_star, const AppearanceConfig& cfg) {
    cfg.validate();
    const int n = cfg.n_views;
    const int m = static_cast<int>(std::llround(cfg.ratio * n));
    if (m <= n) {
        throw RatioTooLow("reference copies (" + std::to_string(m) +
                          ") must outnumber rendered views (" + std::to_string(n) + ")");
    }
    if (i_o.width < 1 || i_o.height < 1) throw Degenerate("reference image is empty");

    const Vec3 center = scene_centroid(object);
    const auto [lo, hi] = scene_bounds(object);
    const double radius = 2.0 * std::max((hi - lo).norm(), 1e-6);
    const double focal = 1.2 * std::min(i_o.width, i_o.height);

    std::vector<Camera> ring(n);
    for (int k = 0; k < n; ++k) {
        const double az = 2.0 * kPi * k / n;
        const Vec3 eye = center + Vec3{radius * std::cos(az), radius * std::sin(az), 0.0};
        ring[k] = Camera::look_at(eye, center, Vec3{0, 0, 1}, focal, focal, i_o.width,
                                  i_o.height);
    }
    std::vector<std::future<RgbImage>> renders;
    renders.reserve(n);
    for (int k = 0; k < n; ++k) {
        renders.push_back(std::async(std::launch::async,
                                     [&, k] { return render_preview(ring[k], object); }));
    }

    RefDataset ds;
    ds.n_rendered = n;
    ds.n_reference = m;
    ds.entries.reserve(static_cast<size_t>(n) + m);
    for (int k = 0; k < n; ++k) {
        ds.entries.push_back(RefEntry{renders[k].get(), ring[k], false});
    }
    for (int k = 0; k < m; ++k) {
        ds.entries.push_back(RefEntry{i_o, p_star, true});
    }
    return ds;
}

std::string format_subject_prompt(const std::string& object_text, const std::string& token) {
    if (token.empty()) return object_text;
    const size_t last_char = object_text.find_last_not_of(' ');
    if (last_char == std::string::npos) throw ConfigError("object text has no words");
    const size_t prev_space = object_text.find_last_of(' ', last_char);
    const size_t word_start = prev_space == std::string::npos ? 0 : prev_space + 1;
    return object_text.substr(0, word_start) + token + " " + object_text.substr(word_start);
}

GaussianScene refine_appearance(const GaussianScene& object, const RefDataset& dataset,
                                TrainableBackend& backend, const AppearanceConfig& cfg) {
    cfg.validate();
    if (dataset.entries.empty()) throw Degenerate("empty appearance dataset");
    const std::string prompt = format_subject_prompt(cfg.object_text, cfg.subject_token);
    backend.fit(dataset, prompt);

    GaussianScene current = object;
    Rng rng(cfg.seed);
    for (int step = 0; step < cfg.steps; ++step) {
        const RefEntry& entry = dataset.entries[step % dataset.entries.size()];
        const Camera& cam = entry.pose;
        const RgbImage x = render_preview(cam, current);

        const double frac = cfg.steps == 1 ? 0.0 : static_cast<double>(step) / (cfg.steps - 1);
        const double upper = cfg.t_upper_start + (cfg.t_upper_end - cfg.t_upper_start) * frac;
        const double t = rng.uniform(cfg.t_min, upper);
        const NoiseImage noise = sample_noise(cam.width, cam.height, rng);

        GuidanceQuery query;
        query.noisy_image = vp_mix(x, noise, t);
        query.prompt = prompt;
        query.timestep = t;
        query.noise = noise;
        query.pose = cam;
        const GuidanceResponse resp = guide_validated(backend, query);

        // Surrogate loss <stopgrad(eps_hat - eps), render> / (3 * npix): the
        // residual image is its gradient with respect to the render.
        const double norm = 1.0 / (3.0 * static_cast<double>(cam.width) * cam.height);
        RgbImage residual(cam.width, cam.height, 0.0);
        for (size_t i = 0; i < residual.values.size(); ++i) {
            residual.values[i] = (resp.predicted_noise.values[i] - noise.values[i]) * norm;
        }
        const AppearanceGrads grads = render_appearance_grads(cam, current, residual);

        for (size_t i = 0; i < current.splats.size(); ++i) {
            const Vec3& gc = grads.color_grad[i];
            const double go = grads.opacity_grad[i];
            if (!std::isfinite(gc.x) || !std::isfinite(gc.y) || !std::isfinite(gc.z) ||
                !std::isfinite(go)) {
                throw NonFinite("appearance gradient diverged at step " + std::to_string(step));
            }
            GaussianSplat& s = current.splats[i];
            if (go != 0.0) {
                s.opacity = std::clamp(s.opacity - cfg.learning_rate * go, 0.0, 1.0);
            }
            if (gc.x != 0.0 || gc.y != 0.0 || gc.z != 0.0) {
                if (s.sh.empty()) s.sh.assign(1, Vec3{0, 0, 0});  // grey, same base color
                // Chain through base_color = clamp(0.5 + sh0 * C0): where the
                // clamp saturates, keep only updates that move back inside.
                const Vec3 raw = Vec3{0.5, 0.5, 0.5} + s.sh[0] * kShC0;
                const auto chain = [](double r, double g) {
                    if (r >= 1.0 && g < 0.0) return 0.0;  // saturated high, pushing higher
                    if (r <= 0.0 && g > 0.0) return 0.0;  // saturated low, pushing lower
                    return g * kShC0;
                };
                const Vec3 g{chain(raw.x, gc.x), chain(raw.y, gc.y), chain(raw.z, gc.z)};
                s.sh[0] = s.sh[0] - g * cfg.learning_rate;
            }
        }
    }
    return current;
}

}  // namespace gsinsert
