#include "gsinsert/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <utility>

#include "gsinsert/digest.hpp"
#include "gsinsert/errors.hpp"
#include "gsinsert/image.hpp"
#include "gsinsert/render.hpp"

namespace gsinsert {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }) == allowed.end())
            throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const char* where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(where) + ": bad value for '" + key + "'");
    }
}

std::string file_digest(const fs::path& p) { return sha256_hex(read_file_bytes(p.string())); }

std::string kind_to_string(PrimitiveKind kind) {
    switch (kind) {
        case PrimitiveKind::Sphere: return "sphere";
        case PrimitiveKind::Box: return "box";
        case PrimitiveKind::TwoLobe: return "two_lobe";
    }
    throw ConfigError("unknown primitive kind");
}

}  // namespace

// ---------------------------------------------------------------------------
// Config structs
// ---------------------------------------------------------------------------

ordered_json SynthSpec::to_json() const {
    return ordered_json{{"kind", kind_to_string(kind)}, {"count", count}, {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
    check_keys(j, "synth spec", {"kind", "count", "seed"});
    SynthSpec s;
    s.kind = primitive_kind_from_string(get_or<std::string>(j, "kind", "sphere", "synth spec"));
    s.count = get_or<int>(j, "count", s.count, "synth spec");
    s.seed = get_or<std::uint64_t>(j, "seed", s.seed, "synth spec");
    if (s.count < 1) throw ConfigError("synth spec: count must be >= 1");
    return s;
}

void GuidanceSpec::validate() const {
    if (type != "zero" && type != "quadratic")
        throw ConfigError("guidance type must be 'zero' or 'quadratic', got '" + type + "'");
    if (!std::isfinite(gain) || gain < 0.0)
        throw ConfigError("guidance gain must be finite and non-negative");
    if (type == "quadratic") {
        if (!target_dof) throw ConfigError("quadratic guidance needs 'target_dof'");
        target_dof->validate();
    }
}

ordered_json GuidanceSpec::to_json() const {
    ordered_json j{{"type", type}, {"gain", gain}};
    if (target_dof) j["target_dof"] = dof_to_json(*target_dof);
    return j;
}

GuidanceSpec GuidanceSpec::from_json(const json& j) {
    check_keys(j, "guidance", {"type", "gain", "target_dof"});
    GuidanceSpec g;
    g.type = get_or<std::string>(j, "type", g.type, "guidance");
    g.gain = get_or<double>(j, "gain", g.gain, "guidance");
    if (j.contains("target_dof")) g.target_dof = dof_from_json(j.at("target_dof"));
    return g;
}

namespace {

ordered_json region_cfg_json(const RegionFitConfig& c) {
    return ordered_json{{"learning_rate", c.learning_rate},
                        {"max_iters", c.max_iters},
                        {"sharpness", c.sharpness},
                        {"convergence_tol", c.convergence_tol}};
}

ordered_json translation_cfg_json(const TranslationFitConfig& c) {
    return ordered_json{{"learning_rate", c.learning_rate},
                        {"max_iters", c.max_iters},
                        {"collision_weight", c.collision_weight},
                        {"collision_margin", c.collision_margin},
                        {"min_views", c.min_views},
                        {"convergence_tol", c.convergence_tol}};
}

ordered_json refine_cfg_json(const SsdsConfig& c) {
    return ordered_json{{"learning_rate", c.learning_rate},
                        {"t_min", c.t_min},
                        {"t_max", c.t_max},
                        {"steps", c.steps},
                        {"lambda_loc", c.lambda_loc},
                        {"loc_weight", c.loc_weight},
                        {"views_per_step", c.views_per_step},
                        {"fd_step", c.fd_step},
                        {"loc_grad_requery", c.loc_grad_requery}};
}

ordered_json appearance_cfg_json(const AppearanceConfig& c, double gain) {
    return ordered_json{{"ratio", c.ratio},
                        {"n_views", c.n_views},
                        {"t_min", c.t_min},
                        {"t_upper_start", c.t_upper_start},
                        {"t_upper_end", c.t_upper_end},
                        {"subject_token", c.subject_token},
                        {"object_text", c.object_text},
                        {"steps", c.steps},
                        {"learning_rate", c.learning_rate},
                        {"gain", gain}};
}

}  // namespace

ordered_json StageConfigs::to_json() const {
    ordered_json j;
    j["region"] = region_cfg_json(region);
    j["scale_rounds"] = scale_rounds;
    j["rotation"] = ordered_json{{"azimuth_step_deg", rotation_grid.azimuth_step_deg},
                                 {"elevation_step_deg", rotation_grid.elevation_step_deg}};
    j["translation"] = translation_cfg_json(translation);
    j["refine"] = refine_cfg_json(refine);
    j["appearance"] = appearance_cfg_json(appearance, appearance_gain);
    return j;
}

StageConfigs StageConfigs::from_json(const json& j) {
    check_keys(j, "stages",
               {"region", "scale_rounds", "rotation", "translation", "refine", "appearance"});
    StageConfigs s;
    if (j.contains("region")) {
        const json& r = j.at("region");
        check_keys(r, "stages.region",
                   {"learning_rate", "max_iters", "sharpness", "convergence_tol"});
        s.region.learning_rate =
            get_or<double>(r, "learning_rate", s.region.learning_rate, "stages.region");
        s.region.max_iters = get_or<int>(r, "max_iters", s.region.max_iters, "stages.region");
        s.region.sharpness = get_or<double>(r, "sharpness", s.region.sharpness, "stages.region");
        s.region.convergence_tol =
            get_or<double>(r, "convergence_tol", s.region.convergence_tol, "stages.region");
    }
    s.scale_rounds = get_or<int>(j, "scale_rounds", s.scale_rounds, "stages");
    if (j.contains("rotation")) {
        const json& r = j.at("rotation");
        check_keys(r, "stages.rotation", {"azimuth_step_deg", "elevation_step_deg"});
        s.rotation_grid.azimuth_step_deg = get_or<double>(
            r, "azimuth_step_deg", s.rotation_grid.azimuth_step_deg, "stages.rotation");
        s.rotation_grid.elevation_step_deg = get_or<double>(
            r, "elevation_step_deg", s.rotation_grid.elevation_step_deg, "stages.rotation");
    }
    if (j.contains("translation")) {
        const json& t = j.at("translation");
        check_keys(t, "stages.translation",
                   {"learning_rate", "max_iters", "collision_weight", "collision_margin",
                    "min_views", "convergence_tol"});
        s.translation.learning_rate =
            get_or<double>(t, "learning_rate", s.translation.learning_rate, "stages.translation");
        s.translation.max_iters =
            get_or<int>(t, "max_iters", s.translation.max_iters, "stages.translation");
        s.translation.collision_weight = get_or<double>(
            t, "collision_weight", s.translation.collision_weight, "stages.translation");
        s.translation.collision_margin = get_or<double>(
            t, "collision_margin", s.translation.collision_margin, "stages.translation");
        s.translation.min_views =
            get_or<int>(t, "min_views", s.translation.min_views, "stages.translation");
        s.translation.convergence_tol = get_or<double>(
            t, "convergence_tol", s.translation.convergence_tol, "stages.translation");
    }
    if (j.contains("refine")) {
        const json& r = j.at("refine");
        check_keys(r, "stages.refine",
                   {"learning_rate", "t_min", "t_max", "steps", "lambda_loc", "loc_weight",
                    "views_per_step", "fd_step", "loc_grad_requery"});
        s.refine.learning_rate =
            get_or<double>(r, "learning_rate", s.refine.learning_rate, "stages.refine");
        s.refine.t_min = get_or<double>(r, "t_min", s.refine.t_min, "stages.refine");
        s.refine.t_max = get_or<double>(r, "t_max", s.refine.t_max, "stages.refine");
        s.refine.steps = get_or<int>(r, "steps", s.refine.steps, "stages.refine");
        s.refine.lambda_loc = get_or<double>(r, "lambda_loc", s.refine.lambda_loc, "stages.refine");
        s.refine.loc_weight = get_or<double>(r, "loc_weight", s.refine.loc_weight, "stages.refine");
        s.refine.views_per_step =
            get_or<int>(r, "views_per_step", s.refine.views_per_step, "stages.refine");
        s.refine.fd_step = get_or<double>(r, "fd_step", s.refine.fd_step, "stages.refine");
        s.refine.loc_grad_requery =
            get_or<bool>(r, "loc_grad_requery", s.refine.loc_grad_requery, "stages.refine");
    }
    if (j.contains("appearance")) {
        const json& a = j.at("appearance");
        check_keys(a, "stages.appearance",
                   {"ratio", "n_views", "t_min", "t_upper_start", "t_upper_end", "subject_token",
                    "object_text", "steps", "learning_rate", "gain"});
        s.appearance.ratio = get_or<double>(a, "ratio", s.appearance.ratio, "stages.appearance");
        s.appearance.n_views =
            get_or<int>(a, "n_views", s.appearance.n_views, "stages.appearance");
        s.appearance.t_min = get_or<double>(a, "t_min", s.appearance.t_min, "stages.appearance");
        s.appearance.t_upper_start = get_or<double>(a, "t_upper_start",
                                                    s.appearance.t_upper_start,
                                                    "stages.appearance");
        s.appearance.t_upper_end =
            get_or<double>(a, "t_upper_end", s.appearance.t_upper_end, "stages.appearance");
        s.appearance.subject_token = get_or<std::string>(a, "subject_token",
                                                         s.appearance.subject_token,
                                                         "stages.appearance");
        s.appearance.object_text = get_or<std::string>(a, "object_text", s.appearance.object_text,
                                                       "stages.appearance");
        s.appearance.steps = get_or<int>(a, "steps", s.appearance.steps, "stages.appearance");
        s.appearance.learning_rate = get_or<double>(a, "learning_rate",
                                                    s.appearance.learning_rate,
                                                    "stages.appearance");
        s.appearance_gain = get_or<double>(a, "gain", s.appearance_gain, "stages.appearance");
    }
    return s;
}

void PipelineConfig::validate() const {
    const bool scene_path_set = !scene_path.empty();
    if (scene_path_set == scene_synth.has_value())
        throw ConfigError("config needs exactly one scene source (path or synth spec)");
    const bool object_path_set = !object_path.empty();
    if (object_path_set == object_synth.has_value())
        throw ConfigError("config needs exactly one object source (path or synth spec)");
    if (instruction.empty()) throw ConfigError("config needs a nonempty 'instruction'");
    if (views_path.empty()) throw ConfigError("config needs a 'views' file path");
    if (out_dir.empty()) throw ConfigError("config needs a nonempty 'out' directory");
    if (mode != "insert" && mode != "replace")
        throw ConfigError("mode must be 'insert' or 'replace', got '" + mode + "'");
    guidance.validate();
    stages.rotation_grid.validate();
    if (stages.scale_rounds < 1) throw ConfigError("stages.scale_rounds must be >= 1");
    if (!(stages.region.learning_rate > 0.0) || stages.region.max_iters < 1)
        throw ConfigError("stages.region needs learning_rate > 0 and max_iters >= 1");
    if (!(stages.translation.learning_rate > 0.0) || stages.translation.max_iters < 1)
        throw ConfigError("stages.translation needs learning_rate > 0 and max_iters >= 1");
    SsdsConfig refine_check = stages.refine;
    refine_check.validate();
    stages.appearance.validate();
    if (!std::isfinite(stages.appearance_gain) || stages.appearance_gain < 0.0)
        throw ConfigError("stages.appearance gain must be finite and non-negative");
}

fs::path PipelineConfig::resolve(const std::string& path) const {
    const fs::path p(path);
    if (p.is_absolute()) return p.lexically_normal();
    return (base_dir / p).lexically_normal();
}

ordered_json PipelineConfig::to_json() const {
    ordered_json j;
    if (scene_synth)
        j["scene"] = scene_synth->to_json();
    else
        j["scene"] = scene_path;
    if (object_synth)
        j["object"] = object_synth->to_json();
    else
        j["object"] = object_path;
    j["instruction"] = instruction;
    if (!reference_image_path.empty()) j["reference_image"] = reference_image_path;
    j["views"] = views_path;
    j["backend"] = backend;
    j["guidance"] = guidance.to_json();
    j["stages"] = stages.to_json();
    j["out"] = out_dir;
    j["seed"] = seed;
    j["mode"] = mode;
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
    check_keys(j, "config",
               {"scene", "object", "instruction", "reference_image", "views", "backend",
                "guidance", "stages", "out", "seed", "mode"});
    PipelineConfig c;
    c.base_dir = base_dir;
    if (j.contains("scene")) {
        if (j.at("scene").is_string())
            c.scene_path = j.at("scene").get<std::string>();
        else
            c.scene_synth = SynthSpec::from_json(j.at("scene"));
    }
    if (j.contains("object")) {
        if (j.at("object").is_string())
            c.object_path = j.at("object").get<std::string>();
        else
            c.object_synth = SynthSpec::from_json(j.at("object"));
    }
    c.instruction = get_or<std::string>(j, "instruction", "", "config");
    c.reference_image_path = get_or<std::string>(j, "reference_image", "", "config");
    c.views_path = get_or<std::string>(j, "views", "", "config");
    c.backend = get_or<std::string>(j, "backend", "", "config");
    if (j.contains("guidance")) c.guidance = GuidanceSpec::from_json(j.at("guidance"));
    if (j.contains("stages")) c.stages = StageConfigs::from_json(j.at("stages"));
    c.out_dir = get_or<std::string>(j, "out", c.out_dir, "config");
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "config");
    c.mode = get_or<std::string>(j, "mode", c.mode, "config");
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& config_path) {
    const fs::path p = fs::absolute(fs::path(config_path));
    if (!fs::exists(p)) throw ConfigError("config file not found: " + p.string());
    json doc;
    try {
        doc = json::parse(read_file_bytes(p.string()));
    } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    return from_json(doc, p.parent_path());
}

std::vector<Camera> load_views(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("views file not found: " + path.string());
    json doc;
    try {
        doc = json::parse(read_file_bytes(path.string()));
    } catch (const json::exception& e) {
        throw ConfigError("views file parse error: " + std::string(e.what()));
    }
    const json* arr = &doc;
    if (doc.is_object()) {
        if (!doc.contains("views")) throw ConfigError("views object needs a 'views' array");
        arr = &doc.at("views");
    }
    if (!arr->is_array()) throw ConfigError("views must be a JSON array of cameras");
    std::vector<Camera> out;
    out.reserve(arr->size());
    try {
        for (const json& v : *arr) out.push_back(camera_from_json(v));
    } catch (const Error& e) {
        throw ConfigError("views file: " + std::string(e.what()));
    }
    return out;
}

void save_views(const std::vector<Camera>& views, const fs::path& path) {
    ordered_json arr = ordered_json::array();
    for (const Camera& v : views) arr.push_back(camera_to_json(v));
    write_file_bytes(path.string(), arr.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stage execution
// ---------------------------------------------------------------------------

namespace {

std::string stage_msg(const std::string& name, const char* what) {
    return "stage " + name + ": " + what;
}

void write_artifact(const fs::path& path, const ordered_json& j) {
    write_file_bytes(path.string(), j.dump(2) + "\n");
}

std::optional<ordered_json> read_artifact(const fs::path& path) {
    if (!fs::exists(path)) return std::nullopt;
    try {
        return ordered_json::parse(read_file_bytes(path.string()));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

bool files_intact(const fs::path& dir, const ordered_json& art) {
    if (!art.contains("files")) return true;
    if (!art.at("files").is_object()) return false;
    for (const auto& [name, sha] : art.at("files").items()) {
        const fs::path p = dir / name;
        if (!sha.is_string() || !fs::exists(p)) return false;
        if (sha.get<std::string>() != file_digest(p)) return false;
    }
    return true;
}

std::string chain_key(const std::string& prev, const std::string& stage,
                      const std::string& extra) {
    return sha256_hex(prev + "|" + stage + "|" + extra);
}

// Runs one stage with caching and error wrapping.  A cached artifact is
// reused untouched when its embedded key matches and all recorded side files
// are intact; otherwise `fn` recomputes it (writing side files itself) and
// the artifact is committed last.
ordered_json run_stage(PipelineResult& res, const fs::path& out, const std::string& name,
                       const std::string& file, const std::string& key,
                       const std::function<ordered_json()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path path = out / file;
    ordered_json art;
    bool cached = false;
    if (auto existing = read_artifact(path);
        existing && existing->contains("cache_key") && (*existing)["cache_key"].is_string() &&
        (*existing)["cache_key"].get<std::string>() == key && files_intact(out, *existing)) {
        art = std::move(*existing);
        cached = true;
    } else {
        try {
            ordered_json payload = fn();
            art["stage"] = name;
            art["cache_key"] = key;
            for (auto& [k, v] : payload.items()) art[k] = std::move(v);
        } catch (const ConfigError& e) {
            throw ConfigError(stage_msg(name, e.what()));
        } catch (const SchemaViolation& e) {
            throw SchemaViolation(stage_msg(name, e.what()));
        } catch (const BackendUnavailable& e) {
            throw BackendUnavailable(stage_msg(name, e.what()));
        } catch (const FixtureMiss& e) {
            throw FixtureMiss(stage_msg(name, e.what()));
        } catch (const MalformedFixture& e) {
            throw MalformedFixture(stage_msg(name, e.what()));
        } catch (const std::exception& e) {
            throw StageFailure(stage_msg(name, e.what()));
        }
        write_artifact(path, art);
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    res.timings.push_back({name, dt.count(), cached});
    res.last_stage = name;
    return art;
}

std::unique_ptr<OracleBackend> make_backend(const PipelineConfig& cfg) {
    const std::string& spec = cfg.backend;
    if (spec.rfind("fixture:", 0) == 0)
        return std::make_unique<FixtureBackend>(cfg.resolve(spec.substr(8)).string());
    if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
        HttpBackendConfig hc;
        hc.endpoint = spec;
        if (const char* tok = std::getenv("ORACLE_TOKEN")) hc.auth_token = tok;
        return std::make_unique<HttpBackend>(hc);
    }
    if (spec.empty()) return make_http_backend_from_env();
    throw ConfigError("backend spec must be fixture:<path> or http(s)://<url>, got '" + spec +
                      "'");
}

GaussianScene load_asset(const PipelineConfig& cfg, const std::string& path,
                         const std::optional<SynthSpec>& synth, std::string* digest) {
    if (synth) {
        *digest = sha256_hex("synth|" + synth->to_json().dump());
        return synth_primitive(synth->kind, synth->count, synth->seed);
    }
    const fs::path p = cfg.resolve(path);
    if (!fs::exists(p)) throw ConfigError("asset not found: " + p.string());
    *digest = file_digest(p);
    return load_ply(p.string());
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"parse",  "region",     "remove", "dof_init",
                                                   "refine", "appearance", "merge"};
    return names;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& through_stage,
                            OracleBackend* backend_override) {
    cfg.validate();
    const std::string stop = through_stage.empty() ? "merge" : through_stage;
    const auto& names = stage_names();
    if (std::find(names.begin(), names.end(), stop) == names.end())
        throw ConfigError("unknown stage '" + stop + "'");
    if (stop == "remove" && cfg.mode != "replace")
        throw ConfigError("stage 'remove' only exists in replace mode");

    PipelineResult res;
    const fs::path out = cfg.resolve(cfg.out_dir);
    res.out_dir = out;
    fs::create_directories(out);

    std::string scene_digest, object_digest;
    const GaussianScene scene = load_asset(cfg, cfg.scene_path, cfg.scene_synth, &scene_digest);
    const GaussianScene object =
        normalize_object(load_asset(cfg, cfg.object_path, cfg.object_synth, &object_digest));
    const std::vector<Camera> views = load_views(cfg.resolve(cfg.views_path));
    if (views.empty()) throw ConfigError("views file contains no cameras");
    res.scene_splats = scene.size();
    res.object_splats = object.size();

    std::unique_ptr<OracleBackend> owned;
    OracleBackend* backend = backend_override;
    if (!backend) {
        owned = make_backend(cfg);
        backend = owned.get();
    }

    const std::string views_digest = file_digest(cfg.resolve(cfg.views_path));
    const std::string ref_digest = cfg.reference_image_path.empty()
                                       ? std::string("none")
                                       : file_digest(cfg.resolve(cfg.reference_image_path));
    const std::string root = sha256_hex(std::string(kPipelineCodeVersion) + "|" + scene_digest +
                                        "|" + object_digest + "|" + views_digest + "|" +
                                        ref_digest + "|" + cfg.instruction + "|" + cfg.mode +
                                        "|" + std::to_string(cfg.seed));

    // -- parse ---------------------------------------------------------------
    const std::string k_parse = chain_key(root, "parse", "");
    const ordered_json a_parse = run_stage(res, out, "parse", "parse.json", k_parse, [&] {
        const RgbImage view0 = render_preview(views[0], scene);
        const ParsedInsertion parsed = parse_instruction(*backend, cfg.instruction, view0);
        ordered_json p;
        p["parsed"] = parsed.to_json();
        return p;
    });
    ParsedInsertion parsed;
    try {
        parsed = ParsedInsertion::from_json(a_parse.at("parsed"));
    } catch (const std::exception& e) {
        throw StageFailure(stage_msg("parse", e.what()));
    }
    if (stop == "parse") return res;

    // -- region --------------------------------------------------------------
    const std::string k_region = chain_key(sha256_hex(a_parse.dump()), "region",
                                           region_cfg_json(cfg.stages.region).dump());
    const ordered_json a_region = run_stage(res, out, "region", "region.json", k_region, [&] {
        const std::vector<MaskImage> masks =
            detect_attachment_masks(views, scene, parsed.attachment_region_prompt, *backend);
        RegionFitConfig rc = cfg.stages.region;
        if (!rc.init) rc.init = default_region_init(scene);
        const RegionFitResult fit = fit_region_dof(masks, views, rc);
        ordered_json p;
        p["dof"] = dof_to_json(fit.dof);
        p["initial_loss"] = fit.initial_loss;
        p["final_loss"] = fit.final_loss;
        p["iters"] = fit.iters;
        p["converged"] = fit.converged;
        p["per_view_iou"] = fit.per_view_iou;
        return p;
    });
    const DoF region_dof = dof_from_json(a_region.at("dof"));
    if (stop == "region") return res;

    // -- remove (replace mode) -----------------------------------------------
    GaussianScene work;
    GaussianScene region_splats;
    std::string d_prev = sha256_hex(a_region.dump());
    if (cfg.mode == "replace") {
        const std::string k_remove = chain_key(d_prev, "remove", "");
        const ordered_json a_remove =
            run_stage(res, out, "remove", "remove.json", k_remove, [&] {
                const AttachmentSplit split = extract_attachment(scene, region_dof);
                save_ply(split.rest, (out / "scene_reduced.ply").string());
                ordered_json p;
                p["removed_splats"] = split.region.size();
                p["kept_splats"] = split.rest.size();
                p["empty_region"] = split.empty_region;
                p["files"] = ordered_json{
                    {"scene_reduced.ply", file_digest(out / "scene_reduced.ply")}};
                return p;
            });
        AttachmentSplit split = extract_attachment(scene, region_dof);
        work = std::move(split.rest);
        region_splats = std::move(split.region);
        res.removed_splats = region_splats.size();
        d_prev = sha256_hex(a_remove.dump());
        if (stop == "remove") return res;
    } else {
        work = scene;
        AttachmentSplit split = extract_attachment(scene, region_dof);
        region_splats = std::move(split.region);
    }

    // -- dof_init --------------------------------------------------------------
    ordered_json init_cfg;
    init_cfg["scale_rounds"] = cfg.stages.scale_rounds;
    init_cfg["rotation"] =
        ordered_json{{"azimuth_step_deg", cfg.stages.rotation_grid.azimuth_step_deg},
                     {"elevation_step_deg", cfg.stages.rotation_grid.elevation_step_deg}};
    init_cfg["translation"] = translation_cfg_json(cfg.stages.translation);
    const std::string k_init = chain_key(d_prev, "dof_init", init_cfg.dump());
    const ordered_json a_init = run_stage(res, out, "dof_init", "dof_init.json", k_init, [&] {
        const RgbImage work0 = render_preview(views[0], work);
        const std::string work0_png = png_encode_rgb(work0);

        const double lambda = decode_lambda_rel(query_validated(
            *backend, make_relative_scale_request(parsed.object_prompt,
                                                  parsed.attachment_region_prompt, work0_png)));
        const double s0 = init_scale(region_dof, lambda);

        const Vec3 c_obj = scene_centroid(object);
        DoF dof0;
        dof0.scale = {s0, s0, s0};
        dof0.translation = region_dof.translation - c_obj * s0;
        const ScaleAdjustResult adj =
            iterative_scale_adjust(work, object, dof0, views, parsed.global_target, *backend,
                                   cfg.stages.scale_rounds, 0);
        const double s = adj.dof.max_extent();

        const UnitQuat r = init_rotation(work0, object, cfg.stages.rotation_grid,
                                         parsed.global_target, *backend);

        std::map<int, std::pair<double, double>> targets;
        for (std::size_t v = 0; v < views.size(); ++v) {
            const std::string png =
                v == 0 ? work0_png : png_encode_rgb(render_preview(views[v], work));
            const auto pts = decode_points(query_validated(
                *backend, make_point_request(parsed.local_target, png, views[v].width,
                                             views[v].height)));
            double mu = 0.0, mv = 0.0;
            for (const auto& [pu, pv] : pts) {
                mu += pu;
                mv += pv;
            }
            const double n = static_cast<double>(pts.size());
            targets[static_cast<int>(v)] = {mu / n, mv / n};
        }

        TranslationFitConfig tc = cfg.stages.translation;
        // Replaced splats are gone from the working scene, and an empty
        // attachment set has no usable extent: both disable the overlap term.
        if (cfg.mode == "replace" || region_splats.empty()) {
            tc.collision_weight = 0.0;
            if (region_splats.empty()) tc.collision_margin = 0.0;
        }
        const TranslationFitResult tf =
            init_translation(object, s, r, targets, views, region_splats, tc);

        const DoF dof_init{{s, s, s}, r, tf.t};
        ordered_json p;
        p["dof"] = dof_to_json(dof_init);
        p["lambda_rel"] = lambda;
        p["scale_initial"] = s0;
        p["scale_rounds_used"] = adj.rounds_used;
        p["scale_factors"] = adj.factors;
        p["collision_weight"] = tc.collision_weight;
        p["translation"] = ordered_json{{"per_view_residuals", tf.per_view_residuals},
                                        {"collision_final", tf.collision_final},
                                        {"initial_loss", tf.initial_loss},
                                        {"final_loss", tf.final_loss},
                                        {"iters", tf.iters},
                                        {"converged", tf.converged}};
        return p;
    });
    const DoF dof_init = dof_from_json(a_init.at("dof"));
    res.dof = dof_init;
    if (stop == "dof_init") return res;

    // -- refine ----------------------------------------------------------------
    const std::string k_refine =
        chain_key(sha256_hex(a_init.dump()), "refine",
                  refine_cfg_json(cfg.stages.refine).dump() + "|" + cfg.guidance.to_json().dump());
    const ordered_json a_refine = run_stage(res, out, "refine", "refine.json", k_refine, [&] {
        std::unique_ptr<GuidanceBackend> gb;
        if (cfg.guidance.type == "quadratic")
            gb = std::make_unique<SyntheticQuadraticBackend>(work, object,
                                                             *cfg.guidance.target_dof,
                                                             cfg.guidance.gain);
        else
            gb = std::make_unique<ZeroResidualBackend>();
        SsdsConfig sc = cfg.stages.refine;
        sc.seed = cfg.seed;
        sc.diagnostics_path = (out / "refine_diag.csv").string();
        const RefineResult rr = refine_dof(work, object, dof_init, parsed, views, *gb, sc);
        ordered_json p;
        p["dof"] = dof_to_json(rr.dof);
        p["steps"] = rr.history.size();
        if (!rr.history.empty()) {
            p["initial_loss_global"] = rr.history.front().loss_global;
            p["final_loss_global"] = rr.history.back().loss_global;
        }
        p["files"] = ordered_json{{"refine_diag.csv", file_digest(out / "refine_diag.csv")}};
        return p;
    });
    const DoF dof_refined = dof_from_json(a_refine.at("dof"));
    res.dof = dof_refined;
    if (stop == "refine") return res;

    // -- appearance --------------------------------------------------------------
    const std::string k_app =
        chain_key(sha256_hex(a_refine.dump()), "appearance",
                  appearance_cfg_json(cfg.stages.appearance, cfg.stages.appearance_gain).dump() +
                      "|" + ref_digest);
    const ordered_json a_app =
        run_stage(res, out, "appearance", "appearance.json", k_app, [&] {
            GaussianScene placed = transform_scene(object, dof_refined);
            ordered_json p;
            if (cfg.reference_image_path.empty()) {
                p["applied"] = false;
            } else {
                const RgbImage ref =
                    load_png_rgb(cfg.resolve(cfg.reference_image_path).string());
                const Camera p_star = estimate_reference_pose(placed, ref, views, *backend);
                AppearanceConfig ac = cfg.stages.appearance;
                ac.seed = cfg.seed;
                const RefDataset ds = build_ref_dataset(placed, ref, p_star, ac);
                ToyAppearanceBackend toy(cfg.stages.appearance_gain);
                placed = refine_appearance(placed, ds, toy, ac);
                p["applied"] = true;
                p["reference_pose"] = camera_to_json(p_star);
                p["dataset"] = ordered_json{{"rendered", ds.n_rendered},
                                            {"reference", ds.n_reference}};
            }
            save_ply(placed, (out / "object_placed.ply").string());
            p["object_splats"] = placed.size();
            p["files"] =
                ordered_json{{"object_placed.ply", file_digest(out / "object_placed.ply")}};
            return p;
        });
    if (stop == "appearance") return res;

    // -- merge ---------------------------------------------------------------
    const GaussianScene placed = load_ply((out / "object_placed.ply").string());
    const std::string k_merge = chain_key(sha256_hex(a_app.dump()), "merge", "");
    run_stage(res, out, "merge", "merge.json", k_merge, [&] {
        const GaussianScene final_scene = merge(work, placed);
        save_ply(final_scene, (out / "final.ply").string());
        ordered_json p;
        p["scene_splats"] = work.size();
        p["removed_splats"] = res.removed_splats;
        p["object_splats"] = placed.size();
        p["final_splats"] = final_scene.size();
        p["files"] = ordered_json{{"final.ply", file_digest(out / "final.ply")}};
        return p;
    });
    res.object_splats = placed.size();
    res.final_scene = load_ply((out / "final.ply").string());
    return res;
}

// ---------------------------------------------------------------------------
// Procedural benchmark
// ---------------------------------------------------------------------------

void BenchmarkSpec::validate() const {
    if (n_cases < 1) throw ConfigError("benchmark needs at least one case");
    if (n_views < 2) throw ConfigError("benchmark needs at least two views");
    if (image_size < 16) throw ConfigError("benchmark image size must be >= 16");
    if (refine_steps < 1) throw ConfigError("benchmark refine steps must be >= 1");
    if (!std::isfinite(oracle_noise_px) || oracle_noise_px < 0.0)
        throw ConfigError("oracle noise must be finite and non-negative");
}

namespace {

BenchmarkCase make_benchmark_case(const BenchmarkSpec& spec, int index, Rng& rng) {
    BenchmarkCase c;
    c.name = "case_" + std::to_string(index);
    c.seed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(index) + 1ULL;
    const std::uint64_t base = c.seed * 31ULL;

    // Platform the object lands on, plus clutter primitives around it.
    const GaussianScene platform =
        transform_scene(synth_primitive(PrimitiveKind::Box, 200, base + 1),
                        DoF{{1.8, 1.8, 1.8}, UnitQuat::identity(), {0.0, 0.0, 0.0}});
    const auto [plat_min, plat_max] = scene_bounds(platform);
    const double top_z = plat_max.z;
    GaussianScene scene = platform;
    const PrimitiveKind kinds[3] = {PrimitiveKind::Sphere, PrimitiveKind::TwoLobe,
                                    PrimitiveKind::Box};
    const int n_clutter = 2 + index % 3;
    for (int k = 0; k < n_clutter; ++k) {
        const double sc = 0.25 + 0.1 * rng.uniform();
        const double theta = 2.0 * kPi * (k + 0.5 * rng.uniform()) / n_clutter;
        const double rad = 1.6 + 0.3 * rng.uniform();
        const Vec3 pos{rad * std::cos(theta), rad * std::sin(theta), plat_min.z + 0.5 * sc};
        scene = merge(scene, transform_scene(
                                 synth_primitive(kinds[k % 3], 50 + (k * 17) % 40,
                                                 base + 10 + static_cast<std::uint64_t>(k)),
                                 DoF{{sc, sc, sc}, UnitQuat::identity(), pos}));
    }
    c.scene = std::move(scene);

    // Attachment region: a shallow box straddling the platform's top face.
    const double rx = 0.35 + 0.15 * rng.uniform();
    const double ry = 0.35 + 0.15 * rng.uniform();
    const double cx = (rng.uniform() - 0.5) * 0.7;
    const double cy = (rng.uniform() - 0.5) * 0.7;
    c.gt_region = DoF{{rx, ry, 0.25}, UnitQuat::identity(), {cx, cy, top_z}};

    // Object and its ground-truth placement.  The rotation sits exactly on
    // the default orientation grid (azimuth multiple of 10, elevation 0) so
    // candidate scoring can recover it exactly.
    c.object = synth_primitive(index % 2 == 0 ? PrimitiveKind::TwoLobe : PrimitiveKind::Sphere,
                               120, base + 50);
    const int az_index = static_cast<int>(rng.uniform_int(0, 35));
    const UnitQuat q =
        UnitQuat::from_azimuth_elevation(deg_to_rad(10.0 * az_index), 0.0);
    const double s = 0.45 + 0.15 * rng.uniform();
    const GaussianScene placed0 =
        transform_scene(c.object, DoF{{s, s, s}, q, {0.0, 0.0, 0.0}});
    const auto [obj_min, obj_max] = scene_bounds(placed0);
    (void)obj_max;
    c.gt = DoF{{s, s, s}, q, {cx, cy, top_z + 0.02 - obj_min.z}};
    c.lambda_rel = c.gt.max_extent() / c.gt_region.max_extent();

    // Ring of views aimed between the platform center and its top face.
    const Vec3 target{0.0, 0.0, 0.5 * top_z};
    const double focal = 0.9 * spec.image_size;
    for (int k = 0; k < spec.n_views; ++k) {
        const double theta = 2.0 * kPi * k / spec.n_views + 0.35;
        const Vec3 eye{3.2 * std::cos(theta), 3.2 * std::sin(theta), 1.6 + 0.2 * (k % 2)};
        c.views.push_back(Camera::look_at(eye, target, {0.0, 0.0, 1.0}, focal, focal,
                                          spec.image_size, spec.image_size));
    }
    const GaussianScene placed_gt = transform_scene(c.object, c.gt);
    for (const Camera& v : c.views) {
        const auto [u, w] = projected_centroid(v, placed_gt);
        if (u < 1.0 || u > v.width - 2.0 || w < 1.0 || w > v.height - 2.0)
            throw Degenerate("benchmark case " + c.name + ": placed object leaves the frame");
    }

    const char* nouns[5] = {"ornament", "figurine", "beacon", "vase", "token"};
    const std::string noun = nouns[index % 5];
    c.instruction = "place the " + noun + " on the marked pad of the platform";
    c.parsed.object_prompt = noun;
    c.parsed.attachment_region_prompt = "the marked pad on the platform";
    c.parsed.global_target = "the " + noun + " standing on the marked pad";
    c.parsed.interaction_word = "on";
    c.parsed.local_target = "the center of the marked pad";
    c.parsed.spatial_word = "above";
    c.parsed.validate();
    return c;
}

}  // namespace

std::vector<BenchmarkCase> synth_benchmark(const BenchmarkSpec& spec) {
    spec.validate();
    Rng root(spec.seed);
    std::vector<BenchmarkCase> cases;
    cases.reserve(static_cast<std::size_t>(spec.n_cases));
    for (int i = 0; i < spec.n_cases; ++i) {
        Rng rng = root.fork(static_cast<std::uint64_t>(i) + 1);
        cases.push_back(make_benchmark_case(spec, i, rng));
    }
    return cases;
}

// ---------------------------------------------------------------------------
// Ground-truth oracle
// ---------------------------------------------------------------------------

GtOracleBackend::GtOracleBackend(const BenchmarkCase& c, double noise_px,
                                 std::uint64_t noise_seed)
    : case_(&c),
      placed_gt_(transform_scene(c.object, c.gt)),
      noise_px_(noise_px),
      rng_(noise_seed) {
    if (!std::isfinite(noise_px) || noise_px < 0.0)
        throw ConfigError("oracle noise must be finite and non-negative");
    if (c.views.empty()) throw ConfigError("ground-truth oracle needs case views");
    view_renders_.reserve(c.views.size());
    for (const Camera& v : c.views) view_renders_.push_back(render_preview(v, c.scene));
}

int GtOracleBackend::match_view(const std::string& png) const {
    const RgbImage img = png_decode_rgb(png);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < view_renders_.size(); ++i) {
        const RgbImage& ref = view_renders_[i];
        if (ref.width != img.width || ref.height != img.height) continue;
        const double d = mean_abs_diff(img, ref);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    if (best < 0)
        throw BackendUnavailable(
            "ground-truth oracle could not match the request image to a case view");
    return best;
}

json GtOracleBackend::query(const OracleRequest& req) {
    switch (req.kind) {
        case OracleKind::Parse:
            return case_->parsed.to_json();
        case OracleKind::DetectRegion: {
            const int v = match_view(req.images.at(0));
            const Camera& cam = case_->views[static_cast<std::size_t>(v)];
            double u0 = std::numeric_limits<double>::infinity(), v0 = u0;
            double u1 = -u0, v1 = -u0;
            int seen = 0;
            for (const Vec3& corner : Box3{case_->gt_region}.corners()) {
                try {
                    const Projection pr = project_point(cam, corner);
                    u0 = std::min(u0, pr.u);
                    v0 = std::min(v0, pr.v);
                    u1 = std::max(u1, pr.u);
                    v1 = std::max(v1, pr.v);
                    ++seen;
                } catch (const BehindCamera&) {
                }
            }
            if (seen == 0) return json{{"found", false}};
            if (noise_px_ > 0.0) {
                u0 += rng_.normal() * noise_px_;
                v0 += rng_.normal() * noise_px_;
                u1 += rng_.normal() * noise_px_;
                v1 += rng_.normal() * noise_px_;
            }
            int x0 = std::clamp(static_cast<int>(std::floor(u0)), 0, cam.width - 1);
            int y0 = std::clamp(static_cast<int>(std::floor(v0)), 0, cam.height - 1);
            int x1 = std::clamp(static_cast<int>(std::ceil(u1)), 0, cam.width - 1);
            int y1 = std::clamp(static_cast<int>(std::ceil(v1)), 0, cam.height - 1);
            if (x1 < x0) std::swap(x0, x1);
            if (y1 < y0) std::swap(y0, y1);
            return json{{"found", true}, {"box", {x0, y0, x1, y1}}};
        }
        case OracleKind::PointTarget: {
            const int v = match_view(req.images.at(0));
            const Camera& cam = case_->views[static_cast<std::size_t>(v)];
            auto [u, w] = projected_centroid(cam, placed_gt_);
            if (noise_px_ > 0.0) {
                u += rng_.normal() * noise_px_;
                w += rng_.normal() * noise_px_;
            }
            u = std::clamp(u, 0.0, cam.width - 1e-3);
            w = std::clamp(w, 0.0, cam.height - 1e-3);
            return json{{"points", {{u, w}}}};
        }
        case OracleKind::ScoreRotation: {
            const json& angles = req.payload.at("candidate_angles");
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < angles.size(); ++i) {
                const double az = angles[i][0].get<double>();
                const double el = angles[i][1].get<double>();
                const UnitQuat q =
                    UnitQuat::from_azimuth_elevation(deg_to_rad(az), deg_to_rad(el));
                const double d = q.geodesic_angle(case_->gt.rotation);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(i);
                }
            }
            return json{{"index", best}};
        }
        case OracleKind::RelativeScale:
            return json{{"lambda_rel", case_->lambda_rel}};
        case OracleKind::ScaleFeedback: {
            const double current = req.payload.at("current_scale").get<double>();
            const double factor = case_->gt.max_extent() / current;
            if (std::abs(factor - 1.0) <= 0.05) return json{{"verdict", "accept"}, {"factor", 1.0}};
            return json{{"verdict", factor > 1.0 ? "increase" : "decrease"}, {"factor", factor}};
        }
        case OracleKind::EmbedImage: {
            const RgbImage img = png_decode_rgb(req.images.at(0));
            // 8x8 mean-pooled luminance, offset so the norm can never vanish.
            std::vector<double> e(64, 1e-3);
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) {
                    const int cell = (y * 8 / img.height) * 8 + (x * 8 / img.width);
                    e[static_cast<std::size_t>(cell)] +=
                        (img.at(x, y, 0) + img.at(x, y, 1) + img.at(x, y, 2)) / 3.0;
                }
            double norm = 0.0;
            for (const double x : e) norm += x * x;
            norm = std::sqrt(norm);
            for (double& x : e) x /= norm;
            return json{{"embedding", e}};
        }
    }
    throw BackendUnavailable("ground-truth oracle: unsupported request kind");
}

ordered_json benchmark_gt_json(const BenchmarkCase& c) {
    ordered_json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    j["dof"] = dof_to_json(c.gt);
    j["region_dof"] = dof_to_json(c.gt_region);
    j["lambda_rel"] = c.lambda_rel;
    j["instruction"] = c.instruction;
    j["parsed"] = c.parsed.to_json();
    return j;
}

DoF benchmark_gt_from_json(const json& j) { return dof_from_json(j.at("dof")); }

void write_benchmark_case(const BenchmarkCase& c, const fs::path& dir,
                          const BenchmarkSpec& spec, bool record_fixture) {
    fs::create_directories(dir);
    save_ply(c.scene, (dir / "scene.ply").string());
    save_ply(c.object, (dir / "object.ply").string());
    save_views(c.views, dir / "views.json");
    write_file_bytes((dir / "gt.json").string(), benchmark_gt_json(c).dump(2) + "\n");

    PipelineConfig cfg;
    cfg.scene_path = "scene.ply";
    cfg.object_path = "object.ply";
    cfg.views_path = "views.json";
    cfg.instruction = c.instruction;
    cfg.backend = "fixture:fixture.json";
    cfg.guidance.type = "quadratic";
    cfg.guidance.gain = 1000.0;
    cfg.guidance.target_dof = c.gt;
    cfg.stages.refine.steps = spec.refine_steps;
    cfg.stages.refine.loc_grad_requery = false;
    cfg.stages.translation.collision_weight = 0.0;
    cfg.out_dir = "out";
    cfg.seed = c.seed;
    cfg.mode = "insert";
    cfg.base_dir = dir;
    write_file_bytes((dir / "config.json").string(), cfg.to_json().dump(2) + "\n");

    if (record_fixture) {
        PipelineConfig rec = cfg;
        rec.out_dir = ".record";
        GtOracleBackend gt(c, spec.oracle_noise_px, c.seed);
        RecordingBackend recorder(gt);
        run_pipeline(rec, "", &recorder);
        recorder.save_transcript((dir / "fixture.json").string());
        fs::remove_all(dir / ".record");
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate(const GaussianScene& object, const std::vector<Camera>& views, const DoF& gt,
                    const DoF& result) {
    gt.validate();
    result.validate();
    if (views.empty()) throw ConfigError("evaluation needs at least one view");
    if (object.empty()) throw Degenerate("cannot evaluate an empty object");
    const GaussianScene placed_gt = transform_scene(object, gt);
    const GaussianScene placed_res = transform_scene(object, result);

    EvalReport rep;
    double iou_sum = 0.0, centroid_sum = 0.0;
    int centroid_views = 0;
    for (const Camera& v : views) {
        const MaskImage mask_gt = splat_silhouette(v, placed_gt);
        const MaskImage mask_res = splat_silhouette(v, placed_res);
        const double iou = mask_iou(mask_res, mask_gt);
        rep.per_view_iou.push_back(iou);
        iou_sum += iou;
        try {
            const auto [gu, gv] = projected_centroid(v, placed_gt);
            const auto [ru, rv] = projected_centroid(v, placed_res);
            const auto in_frame = [&](double u, double w) {
                return u >= 0.0 && u < v.width && w >= 0.0 && w < v.height;
            };
            if (in_frame(gu, gv) && in_frame(ru, rv)) {
                centroid_sum += std::hypot(ru - gu, rv - gv);
                ++centroid_views;
            }
        } catch (const Error&) {
            // A placement invisible from this view contributes no centroid term.
        }
    }
    rep.mean_iou = iou_sum / static_cast<double>(views.size());
    rep.centroid_px_error =
        centroid_views > 0 ? centroid_sum / centroid_views : -1.0;
    rep.rotation_error_deg = gt.rotation.geodesic_angle(result.rotation) * 180.0 / kPi;
    rep.translation_error = (gt.translation - result.translation).norm();
    return rep;
}

EvalReport evaluate(const BenchmarkCase& c, const DoF& result) {
    return evaluate(c.object, c.views, c.gt, result);
}

ordered_json EvalReport::to_json() const {
    ordered_json j;
    j["mean_iou"] = mean_iou;
    j["per_view_iou"] = per_view_iou;
    j["centroid_px_error"] = centroid_px_error;
    j["rotation_error_deg"] = rotation_error_deg;
    j["translation_error"] = translation_error;
    ordered_json rt = ordered_json::array();
    for (const StageTiming& t : stage_runtimes)
        rt.push_back(ordered_json{{"stage", t.name}, {"seconds", t.seconds}, {"cached", t.cached}});
    j["stage_runtimes"] = rt;
    return j;
}

std::string EvalReport::to_csv() const {
    auto num = [](double v) { return ordered_json(v).dump(); };
    std::string csv = "metric,value\n";
    csv += "mean_iou," + num(mean_iou) + "\n";
    csv += "centroid_px_error," + num(centroid_px_error) + "\n";
    csv += "rotation_error_deg," + num(rotation_error_deg) + "\n";
    csv += "translation_error," + num(translation_error) + "\n";
    for (std::size_t i = 0; i < per_view_iou.size(); ++i)
        csv += "view_iou_" + std::to_string(i) + "," + num(per_view_iou[i]) + "\n";
    for (const StageTiming& t : stage_runtimes)
        csv += "runtime_" + t.name + "," + num(t.seconds) + "\n";
    return csv;
}

}  // namespace gsinsert
