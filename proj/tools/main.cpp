// Command-line driver for the splat insertion pipeline: staged runs, synthetic
// benchmark generation, evaluation, and PLY rendering.
//
// Exit codes: 0 success, 2 configuration error, 3 backend/protocol error,
// 4 stage or internal failure.

#include <cstdint>
#include <filesystem>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsinsert/digest.hpp"
#include "gsinsert/errors.hpp"
#include "gsinsert/image.hpp"
#include "gsinsert/pipeline.hpp"
#include "gsinsert/render.hpp"

namespace fs = std::filesystem;
using namespace gsinsert;
using nlohmann::ordered_json;

namespace {

struct PipelineArgs {
    std::string config;
    std::string backend;
    std::string out;
    std::uint64_t seed = 0;
};

struct SynthArgs {
    std::string out;
    int cases = 1;
    std::uint64_t seed = 1;
    int views = 4;
    int image_size = 64;
    int refine_steps = 40;
    double noise_px = 0.0;
    bool no_fixture = false;
};

struct EvalArgs {
    std::string case_dir;
    std::string run_dir;
    std::string out;
};

struct RenderArgs {
    std::string scene;
    std::string views;
    std::string out;
    std::string prefix = "view_";
};

void add_pipeline_options(CLI::App* sub, PipelineArgs& a) {
    sub->add_option("--config", a.config, "Pipeline config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--backend", a.backend,
                    "Override the oracle backend: fixture:<path> or http(s)://<url>");
    sub->add_option("--out", a.out, "Override the output directory");
    sub->add_option("--seed", a.seed, "Override the config seed");
}

// Fixture paths given on the command line resolve against the working
// directory, not the config file's directory.
std::string absolutize_backend(const std::string& spec) {
    if (spec.rfind("fixture:", 0) == 0)
        return "fixture:" + fs::absolute(spec.substr(8)).string();
    return spec;
}

ordered_json timings_json(const PipelineResult& res) {
    ordered_json arr = ordered_json::array();
    for (const StageTiming& t : res.timings)
        arr.push_back(
            ordered_json{{"stage", t.name}, {"seconds", t.seconds}, {"cached", t.cached}});
    return arr;
}

int run_pipeline_command(const CLI::App* sub, const PipelineArgs& a,
                         const std::string& through, bool force_replace) {
    PipelineConfig cfg = PipelineConfig::load(a.config);
    if (sub->count("--seed") > 0) cfg.seed = a.seed;
    if (!a.backend.empty()) cfg.backend = absolutize_backend(a.backend);
    if (!a.out.empty()) cfg.out_dir = fs::absolute(a.out).string();
    if (force_replace) cfg.mode = "replace";
    const PipelineResult res = run_pipeline(cfg, through);

    ordered_json out;
    out["out_dir"] = res.out_dir.string();
    out["last_stage"] = res.last_stage;
    out["dof"] = dof_to_json(res.dof);
    out["scene_splats"] = res.scene_splats;
    out["removed_splats"] = res.removed_splats;
    out["object_splats"] = res.object_splats;
    if (!res.final_scene.empty()) out["final_splats"] = res.final_scene.size();
    out["timings"] = timings_json(res);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_synth(const SynthArgs& a) {
    BenchmarkSpec spec;
    spec.n_cases = a.cases;
    spec.seed = a.seed;
    spec.oracle_noise_px = a.noise_px;
    spec.n_views = a.views;
    spec.image_size = a.image_size;
    spec.refine_steps = a.refine_steps;
    const std::vector<BenchmarkCase> cases = synth_benchmark(spec);

    const fs::path out = fs::absolute(a.out);
    std::vector<std::future<void>> jobs;
    jobs.reserve(cases.size());
    for (const BenchmarkCase& c : cases)
        jobs.push_back(std::async(std::launch::async, [&spec, &c, &out, &a] {
            write_benchmark_case(c, out / c.name, spec, !a.no_fixture);
        }));
    for (auto& j : jobs) j.get();

    ordered_json summary;
    summary["cases"] = ordered_json::array();
    for (const BenchmarkCase& c : cases) summary["cases"].push_back((out / c.name).string());
    std::cout << summary.dump(2) << "\n";
    return 0;
}

DoF read_run_dof(const fs::path& run_dir) {
    for (const char* name : {"refine.json", "dof_init.json"}) {
        const fs::path p = run_dir / name;
        if (!fs::exists(p)) continue;
        const ordered_json art = ordered_json::parse(read_file_bytes(p.string()));
        return dof_from_json(art.at("dof"));
    }
    throw ConfigError("run directory has no placement artifact (refine.json or dof_init.json): " +
                      run_dir.string());
}

int run_eval(const EvalArgs& a) {
    const fs::path case_dir = fs::absolute(a.case_dir);
    const fs::path run_dir = fs::absolute(a.run_dir);
    const GaussianScene object = load_ply((case_dir / "object.ply").string());
    const std::vector<Camera> views = load_views(case_dir / "views.json");
    const fs::path gt_path = case_dir / "gt.json";
    if (!fs::exists(gt_path)) throw ConfigError("case directory has no gt.json");
    const DoF gt = benchmark_gt_from_json(
        nlohmann::json::parse(read_file_bytes(gt_path.string())));
    const DoF result = read_run_dof(run_dir);

    const EvalReport rep = evaluate(object, views, gt, result);
    const fs::path report_dir = a.out.empty() ? run_dir : fs::absolute(a.out);
    write_file_bytes((report_dir / "report.json").string(), rep.to_json().dump(2) + "\n");
    write_file_bytes((report_dir / "report.csv").string(), rep.to_csv());
    std::cout << rep.to_json().dump(2) << "\n";
    return 0;
}

int run_render(const RenderArgs& a) {
    const GaussianScene scene = load_ply(a.scene);
    const std::vector<Camera> views = load_views(a.views);
    const fs::path out = fs::absolute(a.out);
    fs::create_directories(out);
    ordered_json files = ordered_json::array();
    for (std::size_t i = 0; i < views.size(); ++i) {
        const fs::path p = out / (a.prefix + std::to_string(i) + ".png");
        save_png(render_preview(views[i], scene), p.string());
        files.push_back(p.string());
    }
    std::cout << ordered_json{{"rendered", files}}.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Insert or replace a splat object in a Gaussian-splat scene"};
    app.require_subcommand(1);

    PipelineArgs pa;
    struct StageCmd {
        const char* name;
        const char* desc;
        const char* through;
        bool replace;
    };
    const StageCmd stage_cmds[] = {
        {"parse", "Parse the instruction into structured semantics", "parse", false},
        {"fit-region", "Run through attachment-region fitting", "region", false},
        {"init", "Run through scale/rotation/translation initialization", "dof_init", false},
        {"refine", "Run through guided pose refinement", "refine", false},
        {"appearance", "Run through appearance refinement", "appearance", false},
        {"run", "Run the full insertion pipeline", "", false},
        {"replace", "Run the full pipeline in replace mode", "", true},
    };
    std::vector<CLI::App*> stage_subs;
    for (const StageCmd& sc : stage_cmds) {
        CLI::App* sub = app.add_subcommand(sc.name, sc.desc);
        add_pipeline_options(sub, pa);
        stage_subs.push_back(sub);
    }

    SynthArgs sa;
    CLI::App* synth = app.add_subcommand("synth", "Generate synthetic benchmark cases");
    synth->add_option("--out", sa.out, "Directory to write case folders into")->required();
    synth->add_option("--cases", sa.cases, "Number of cases");
    synth->add_option("--seed", sa.seed, "Benchmark seed");
    synth->add_option("--views", sa.views, "Cameras per case");
    synth->add_option("--image-size", sa.image_size, "Square view resolution");
    synth->add_option("--refine-steps", sa.refine_steps, "Refinement steps in case configs");
    synth->add_option("--noise-px", sa.noise_px, "Gaussian pixel noise on oracle answers");
    synth->add_flag("--no-fixture", sa.no_fixture, "Skip recording oracle fixtures");

    EvalArgs ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score a run against a case's ground truth");
    eval_cmd->add_option("--case", ea.case_dir, "Benchmark case directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--run", ea.run_dir, "Pipeline output directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", ea.out, "Where to write report.json/report.csv");

    RenderArgs ra;
    CLI::App* render_cmd = app.add_subcommand("render", "Render a PLY scene from saved views");
    render_cmd->add_option("--scene", ra.scene, "Scene PLY")->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--views", ra.views, "Views JSON")
        ->required()
        ->check(CLI::ExistingFile);
    render_cmd->add_option("--out", ra.out, "Output directory")->required();
    render_cmd->add_option("--prefix", ra.prefix, "Output file prefix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        for (std::size_t i = 0; i < stage_subs.size(); ++i)
            if (stage_subs[i]->parsed())
                return run_pipeline_command(stage_subs[i], pa, stage_cmds[i].through,
                                            stage_cmds[i].replace);
        if (synth->parsed()) return run_synth(sa);
        if (eval_cmd->parsed()) return run_eval(ea);
        if (render_cmd->parsed()) return run_render(ra);
        std::cerr << "error: no subcommand selected\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const SchemaViolation& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const BackendUnavailable& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const FixtureMiss& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const MalformedFixture& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
