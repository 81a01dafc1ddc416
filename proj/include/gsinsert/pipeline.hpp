#pragma once
// Staged insertion/replacement pipeline with content-addressed artifact
// caching, a procedural benchmark generator backed by a ground-truth oracle,
// and placement evaluation metrics.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gsinsert/appearance.hpp"
#include "gsinsert/dofinit.hpp"
#include "gsinsert/geometry.hpp"
#include "gsinsert/guidance.hpp"
#include "gsinsert/oracle.hpp"
#include "gsinsert/refine.hpp"
#include "gsinsert/region.hpp"
#include "gsinsert/rng.hpp"
#include "gsinsert/scene.hpp"

namespace gsinsert {

// Folded into every stage cache key; bump when a stage algorithm changes so
// stale artifacts are recomputed instead of reused.
inline constexpr const char* kPipelineCodeVersion = "gsinsert-pipeline-1";

// Procedural stand-in for a PLY path.
struct SynthSpec {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    int count = 200;
    std::uint64_t seed = 1;

    nlohmann::ordered_json to_json() const;
    static SynthSpec from_json(const nlohmann::json& j);
};

// Guidance backend selection for the pose-refinement stage.
struct GuidanceSpec {
    std::string type = "zero";      // "zero" | "quadratic"
    double gain = 1.0;              // quadratic pull strength
    std::optional<DoF> target_dof;  // required when type == "quadratic"

    void validate() const;  // ConfigError on unknown type or missing target
    nlohmann::ordered_json to_json() const;
    static GuidanceSpec from_json(const nlohmann::json& j);
};

struct StageConfigs {
    RegionFitConfig region;  // .init left empty -> default_region_init
    int scale_rounds = 3;
    RotationGrid rotation_grid;
    TranslationFitConfig translation;
    SsdsConfig refine;            // .seed and .diagnostics_path set by the pipeline
    AppearanceConfig appearance;  // .seed set by the pipeline
    double appearance_gain = 1.0; // trainable toy backend pull strength

    nlohmann::ordered_json to_json() const;
    static StageConfigs from_json(const nlohmann::json& j);
};

struct PipelineConfig {
    // Exactly one of path / synth per asset.
    std::string scene_path;
    std::optional<SynthSpec> scene_synth;
    std::string object_path;
    std::optional<SynthSpec> object_synth;

    std::string instruction;
    std::string reference_image_path;  // empty: appearance stage passes through
    std::string views_path;            // JSON list of cameras
    std::string backend;  // "fixture:<path>" | "http(s)://<url>" | "" (environment)
    GuidanceSpec guidance;
    StageConfigs stages;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    std::string mode = "insert";  // "insert" | "replace"

    // Directory relative paths resolve against (set by load()).
    std::filesystem::path base_dir = ".";

    void validate() const;  // ConfigError on contradictions or bad values
    std::filesystem::path resolve(const std::string& path) const;
    nlohmann::ordered_json to_json() const;  // persisted form, paths as given
    static PipelineConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir);
    static PipelineConfig load(const std::string& config_path);
};

// Cameras persist as a JSON array (a bare array or an object with "views").
std::vector<Camera> load_views(const std::filesystem::path& path);
void save_views(const std::vector<Camera>& views, const std::filesystem::path& path);

struct StageTiming {
    std::string name;
    double seconds = 0.0;
    bool cached = false;
};

struct PipelineResult {
    DoF dof;                    // final object placement
    GaussianScene final_scene;  // filled only when the merge stage ran
    std::size_t scene_splats = 0;
    std::size_t removed_splats = 0;  // replace mode: splats taken out
    std::size_t object_splats = 0;
    std::vector<StageTiming> timings;
    std::filesystem::path out_dir;
    std::string last_stage;  // last stage executed or reused
};

// Stage order: parse, region, [remove], dof_init, refine, appearance, merge
// ("remove" only in replace mode).  `through_stage` stops after the named
// stage ("" or "merge" = full run).  Each stage writes a JSON artifact (plus
// PLY/CSV side files) into out_dir and embeds a content-addressed cache key;
// a re-run with matching keys reuses artifacts without rewriting them.  The
// first failing stage aborts with its name prefixed to the error message and
// the error type preserved for protocol/config failures (anything else is
// wrapped in StageFailure); artifacts of completed stages are retained.
// `backend` overrides the config's backend spec when non-null (the caller
// keeps ownership).  Cache keys cover inputs, configuration, and code
// version, not backend identity: point out_dir at a fresh directory when
// switching backends.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& through_stage = "",
                            OracleBackend* backend = nullptr);

// ---------------------------------------------------------------------------
// Procedural benchmark
// ---------------------------------------------------------------------------

struct BenchmarkSpec {
    int n_cases = 1;
    std::uint64_t seed = 1;
    double oracle_noise_px = 0.0;  // Gaussian pixel noise on boxes and points
    int n_views = 4;
    int image_size = 64;
    int refine_steps = 40;  // benchmark configs run short refinements

    void validate() const;  // ConfigError on out-of-range fields
};

struct BenchmarkCase {
    std::string name;
    GaussianScene scene;   // platform plus clutter
    GaussianScene object;  // normalized insertable object
    std::vector<Camera> views;
    std::string instruction;
    ParsedInsertion parsed;   // ground-truth parse of the instruction
    DoF gt_region;            // attachment-region box (anisotropic scale allowed)
    DoF gt;                   // object placement (isotropic scale)
    double lambda_rel = 1.0;  // gt max extent / region max extent
    std::uint64_t seed = 0;
};

// Deterministic in the spec: same spec -> identical cases.  Every case keeps
// the placed object visible from all views.
std::vector<BenchmarkCase> synth_benchmark(const BenchmarkSpec& spec);

// Answers every oracle kind consistently with a case's ground truth.  View
// identification matches the request image against renders of the case views
// (nearest by mean absolute pixel difference, so composited or reduced
// variants of a view still resolve to it).  `noise_px` adds seeded Gaussian
// pixel noise to detection boxes and point targets, clamped in bounds.
class GtOracleBackend final : public OracleBackend {
  public:
    explicit GtOracleBackend(const BenchmarkCase& c, double noise_px = 0.0,
                             std::uint64_t noise_seed = 0);
    nlohmann::json query(const OracleRequest& req) override;

  private:
    int match_view(const std::string& png) const;

    const BenchmarkCase* case_;
    GaussianScene placed_gt_;
    std::vector<RgbImage> view_renders_;
    double noise_px_ = 0.0;
    Rng rng_;
};

nlohmann::ordered_json benchmark_gt_json(const BenchmarkCase& c);
DoF benchmark_gt_from_json(const nlohmann::json& j);

// Writes scene.ply / object.ply / views.json / gt.json / config.json into
// `dir`; when record_fixture is set, additionally runs the full pipeline
// against the ground-truth oracle in a scratch directory and saves the
// recorded transcript as fixture.json, making the directory self-contained
// (config.json points its backend at the fixture).
void write_benchmark_case(const BenchmarkCase& c, const std::filesystem::path& dir,
                          const BenchmarkSpec& spec, bool record_fixture = true);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<double> per_view_iou;  // silhouette IoU, result vs ground truth
    double mean_iou = 0.0;             // mean over views, in [0, 1]
    double centroid_px_error = -1.0;   // mean over views seeing both; -1 when none
    double rotation_error_deg = 0.0;   // geodesic angle between rotations
    double translation_error = 0.0;    // Euclidean distance between translations
    std::vector<StageTiming> stage_runtimes;  // filled by callers that timed a run

    nlohmann::ordered_json to_json() const;
    std::string to_csv() const;  // "metric,value" rows, deterministic order
};

EvalReport evaluate(const GaussianScene& object, const std::vector<Camera>& views,
                    const DoF& gt, const DoF& result);
EvalReport evaluate(const BenchmarkCase& c, const DoF& result);

}  // namespace gsinsert
