#include "dalign/cli.hpp"

#include "dalign/errors.hpp"
#include "dalign/feature_file.hpp"
#include "dalign/gradcheck.hpp"
#include "dalign/weights_file.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

namespace dalign {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    out << text;
}

const char* backend_name(NnBackend backend)
{
    return backend == NnBackend::reference ? "reference" : "blocked";
}

struct EvalOptions {
    std::string manifest = "synth/manifest.txt";
    std::string train_manifest;
    std::string weights;
    std::string table;
    std::size_t ways = 5;
    std::size_t shots = 1;
    std::size_t queries = 0;
    std::size_t episodes = 600;
    std::uint64_t seed = 0;
    double select_threshold = kDefaultSelectThreshold;
    double erase_threshold = kDefaultEraseThreshold;
    bool no_sac = false;
    bool timing = false;
    std::string backend = "blocked";
};

int run_eval(const EvalOptions& o, std::ostream& out, std::ostream& err)
{
    const std::size_t threads = threads_from_environment();
    DatasetManifest manifest = load_manifest(o.manifest);
    if (!o.train_manifest.empty()) {
        check_disjoint_splits(load_manifest(o.train_manifest), manifest);
    }

    EpisodeSpec spec;
    spec.ways = o.ways;
    spec.shots = o.shots;
    spec.queries_per_class = o.queries == 0 ? default_queries_per_class(o.shots) : o.queries;
    spec.seed = o.seed;
    spec.validate(manifest);

    PipelineConfig config;
    config.select_threshold = o.select_threshold;
    config.erase_threshold = o.erase_threshold;
    config.backend = o.backend == "reference" ? NnBackend::reference : NnBackend::blocked;
    if (!o.no_sac && !o.weights.empty()) {
        config.use_sac = true;
        config.weights = read_weights_file(o.weights);
    }

    const Dataset dataset = load_dataset(std::move(manifest));
    const EvalReport report =
        evaluate(dataset, spec, o.episodes, make_alignment_pipeline(config), threads);
    out << format_eval_report(report, spec, config);
    if (!o.table.empty()) {
        write_text(o.table, format_accuracy_table(report));
    }
    if (o.timing) {
        err << fmt::format("wall_clock_seconds: {:.3f}\n", report.wall_seconds);
    }
    return kExitOk;
}

struct SynthOptions {
    SyntheticSpec spec;
    std::uint64_t seed = 0;
    std::string out = "synth";
    int dtype = 0;
};

int run_synth(const SynthOptions& o, std::ostream& out)
{
    const Dataset dataset = synthetic_dataset(o.spec, o.seed);
    const auto path = write_dataset(dataset, o.out, o.dtype == 1 ? Dtype::f32 : Dtype::f64);
    out << fmt::format("manifest: {}\nclasses: {}\nrecords: {}\nshape: {}x{}x{}\n",
                       path.string(), dataset.manifest.classes.size(),
                       dataset.manifest.records.size(), o.spec.dim, o.spec.height, o.spec.width);
    return kExitOk;
}

struct LocalizeOptions {
    std::string manifest;
    std::string weights;
    double erase_threshold = kDefaultEraseThreshold;
    double box_threshold = kDefaultBoxThreshold;
    std::size_t image_height = 0;
    std::size_t image_width = 0;
    std::string dump_cams;
    std::string records;
};

int run_localize(const LocalizeOptions& o, std::ostream& out)
{
    const DatasetManifest manifest = load_manifest(o.manifest);
    const SacWeights weights = read_weights_file(o.weights);
    if (weights.classifier.classes() < manifest.classes.size()) {
        throw DomainError(fmt::format("classifier scores {} classes, manifest has {}",
                                      weights.classifier.classes(), manifest.classes.size()));
    }
    if ((o.image_height == 0) != (o.image_width == 0)) {
        throw DomainError("--image-height and --image-width go together");
    }
    if (!o.dump_cams.empty()) {
        std::filesystem::create_directories(o.dump_cams);
    }

    std::vector<WsolRecord> records;
    std::string table = "# record true_class predicted_class iou pred_x_min pred_y_min pred_x_max "
                        "pred_y_max gt_x_min gt_y_min gt_x_max gt_y_max\n";
    for (std::size_t k = 0; k < manifest.records.size(); ++k) {
        const auto& entry = manifest.records[k];
        if (!entry.bbox) {
            throw FormatError(fmt::format("line {}: localization needs a bbox on every record",
                                          entry.line),
                              entry.line);
        }
        const DescriptorField field = read_feature_file(manifest.resolve(entry));
        const SacResult sac = sac_forward(field, weights, o.erase_threshold, entry.class_index);
        Cam cam = sac.fused;
        if (o.image_height != 0) {
            cam = nearest_resize(cam, o.image_height, o.image_width);
        }
        if (!o.dump_cams.empty()) {
            const std::vector<double> values(cam.values().begin(), cam.values().end());
            write_feature_file(std::filesystem::path(o.dump_cams) / fmt::format("{:05}.daf", k),
                               DescriptorField(1, cam.height(), cam.width(), values));
        }
        // A map with no positive cell has no foreground; fall back to the whole map.
        const BBox predicted = cam.max() > 0.0
                                   ? cam_to_bbox(cam, o.box_threshold)
                                   : BBox(0, 0, static_cast<long>(cam.width()),
                                          static_cast<long>(cam.height()));
        const WsolRecord record{predicted, *entry.bbox, sac.predicted_class, entry.class_index};
        records.push_back(record);
        table += fmt::format("{} {} {} {:.6f} {} {} {} {} {} {} {} {}\n", k, record.true_class,
                             record.predicted_class, iou(record.predicted, record.ground_truth),
                             predicted.x_min, predicted.y_min, predicted.x_max, predicted.y_max,
                             entry.bbox->x_min, entry.bbox->y_min, entry.bbox->x_max,
                             entry.bbox->y_max);
    }
    const WsolMetrics metrics = wsol_metrics(records);
    out << fmt::format("records: {}\ntop1_loc: {:.6f}\ntop1_clas: {:.6f}\ngt_known_loc: {:.6f}\n"
                       "iou_threshold: {} (inclusive)\n",
                       records.size(), metrics.top1_loc, metrics.top1_clas, metrics.gt_known_loc,
                       kIouThreshold);
    if (!o.records.empty()) {
        write_text(o.records, table);
    }
    return kExitOk;
}

int run_gradcheck(const GradCheckConfig& config, double tolerance, std::ostream& out)
{
    const GradCheckResult r = run_gradient_check(config);
    const bool ok = r.max_relative_error < tolerance;
    out << fmt::format("instances: {}\ncomponents: {}\nredrawn_ties: {}\nmax_absolute_error: {:.3e}\n"
                       "max_relative_error: {:.3e}\ntolerance: {:.1e}\nresult: {}\n",
                       r.instances, r.components, r.redrawn_ties, r.max_absolute_error,
                       r.max_relative_error, tolerance, ok ? "pass" : "fail");
    return ok ? kExitOk : kExitError;
}

int run_inspect(const std::string& path, std::ostream& out)
{
    const FeatureFileHeader header = read_feature_header(path);
    const DescriptorField field = read_feature_file(path);
    const auto values = field.values();
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    out << fmt::format("magic: DAF1\nversion: {}\ndtype: {}\nchannels: {}\nheight: {}\nwidth: {}\n"
                       "descriptors: {}\npayload_bytes: {}\nmin: {:.17g}\nmax: {:.17g}\nmean: {:.17g}\n",
                       header.version, header.dtype == Dtype::f64 ? "f64" : "f32", header.channels,
                       header.height, header.width, std::size_t{header.height} * header.width,
                       header.value_count() * header.value_size(), *lo, *hi,
                       sum / static_cast<double>(values.size()));
    return kExitOk;
}

struct InitWeightsOptions {
    WeightsShape shape;
    std::uint64_t seed = 0;
    std::string out = "weights.json";
};

int run_init_weights(const InitWeightsOptions& o, std::ostream& out)
{
    write_weights_file(o.out, random_sac_weights(o.shape, o.seed));
    out << fmt::format("weights: {}\n", o.out);
    return kExitOk;
}

} // namespace

std::size_t threads_from_environment()
{
    const char* raw = std::getenv("DA_THREADS");
    if (raw == nullptr || *raw == '\0') {
        return 0;
    }
    const std::string_view text(raw);
    std::size_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size() || value == 0) {
        throw DomainError(fmt::format("DA_THREADS must be a positive integer, got '{}'", text));
    }
    return value;
}

std::string format_eval_report(const EvalReport& report, const EpisodeSpec& spec,
                               const PipelineConfig& config)
{
    std::string out;
    out += fmt::format("protocol: {}-way {}-shot\n", spec.ways, spec.shots);
    out += fmt::format("queries_per_class: {}\n", spec.queries_per_class);
    out += fmt::format("episodes: {}\n", report.n_episodes);
    out += fmt::format("seed: {}\n", spec.seed);
    if (config.use_sac) {
        out += fmt::format("selection: sac (select_threshold {}, erase_threshold {})\n",
                           config.select_threshold, config.erase_threshold);
    } else {
        out += "selection: none\n";
    }
    out += fmt::format("nn_backend: {}\n", backend_name(config.backend));
    out += fmt::format("mean_accuracy: {:.6f}\n", report.mean);
    out += fmt::format("ci95_halfwidth: {:.6f}\n", report.ci95);
    out += "ci95_method: 1.96*sample_sd/sqrt(episodes)\n";
    if (report.wsol) {
        out += fmt::format("top1_loc: {:.6f}\ntop1_clas: {:.6f}\ngt_known_loc: {:.6f}\n",
                           report.wsol->top1_loc, report.wsol->top1_clas,
                           report.wsol->gt_known_loc);
    }
    return out;
}

std::string format_accuracy_table(const EvalReport& report)
{
    std::string out = "episode\taccuracy\n";
    for (std::size_t e = 0; e < report.accuracies.size(); ++e) {
        out += fmt::format("{}\t{:.17g}\n", e, report.accuracies[e]);
    }
    return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Few-shot classification by semantic alignment of selected deep descriptors",
                 args.empty() ? "dalign" : args.front()};
    app.require_subcommand(1);

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate C-way K-shot episodes on a manifest");
    eval_cmd->add_option("manifest", eval.manifest, "Dataset manifest")->capture_default_str();
    eval_cmd->add_option("--ways", eval.ways, "Classes per episode")->capture_default_str();
    eval_cmd->add_option("--shots", eval.shots, "Support records per class")->capture_default_str();
    eval_cmd->add_option("--queries", eval.queries,
                         "Query records per class (default 15 for 1-shot, 10 otherwise)");
    eval_cmd->add_option("--episodes", eval.episodes, "Episodes to evaluate")->capture_default_str();
    eval_cmd->add_option("--seed", eval.seed, "Root seed")->capture_default_str();
    eval_cmd->add_option("--select-threshold", eval.select_threshold,
                         "Fused-map threshold for descriptor selection")
        ->capture_default_str();
    eval_cmd->add_option("--erase-threshold", eval.erase_threshold,
                         "Attention threshold for the erased branch")
        ->capture_default_str();
    eval_cmd->add_option("--weights", eval.weights, "SAC weights (JSON); enables selection");
    eval_cmd->add_flag("--no-sac", eval.no_sac, "Use every descriptor even when weights are given");
    eval_cmd->add_option("--backend", eval.backend, "Nearest-neighbour backend")
        ->check(CLI::IsMember({"reference", "blocked"}))
        ->capture_default_str();
    eval_cmd->add_option("--table", eval.table, "Write per-episode accuracies as TSV");
    eval_cmd->add_option("--train-manifest", eval.train_manifest,
                         "Training manifest whose classes must not overlap");
    eval_cmd->add_flag("--timing", eval.timing, "Print wall-clock time to stderr");

    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic feature dataset");
    synth_cmd->add_option("--classes", synth.spec.classes)->capture_default_str();
    synth_cmd->add_option("--per-class", synth.spec.records_per_class)->capture_default_str();
    synth_cmd->add_option("--dim", synth.spec.dim, "Descriptor dimension d")->capture_default_str();
    synth_cmd->add_option("--height", synth.spec.height)->capture_default_str();
    synth_cmd->add_option("--width", synth.spec.width)->capture_default_str();
    synth_cmd->add_option("--separation", synth.spec.separation,
                          "Distance between class means in noise standard deviations")
        ->capture_default_str();
    synth_cmd->add_option("--object-height", synth.spec.object_height,
                          "Rows carrying class signal (0 = all)");
    synth_cmd->add_option("--object-width", synth.spec.object_width,
                          "Columns carrying class signal (0 = all)");
    synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "Output directory")->capture_default_str();
    synth_cmd->add_option("--dtype", synth.dtype, "0 = f64, 1 = f32")
        ->check(CLI::IsMember({0, 1}))
        ->capture_default_str();

    LocalizeOptions loc;
    auto* loc_cmd = app.add_subcommand("localize", "Weakly-supervised localization metrics");
    loc_cmd->add_option("manifest", loc.manifest, "Manifest with bbox on every record")->required();
    loc_cmd->add_option("--weights", loc.weights, "SAC weights (JSON)")->required();
    loc_cmd->add_option("--erase-threshold", loc.erase_threshold)->capture_default_str();
    loc_cmd->add_option("--box-threshold", loc.box_threshold, "Fraction of the map maximum")
        ->capture_default_str();
    loc_cmd->add_option("--image-height", loc.image_height,
                        "Resize maps to this many rows before box extraction");
    loc_cmd->add_option("--image-width", loc.image_width,
                        "Resize maps to this many columns before box extraction");
    loc_cmd->add_option("--dump-cams", loc.dump_cams, "Directory for fused maps as DAF1 (d=1)");
    loc_cmd->add_option("--records", loc.records, "Write the per-record localization table");

    GradCheckConfig grad;
    double tolerance = 1e-4;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
    grad_cmd->add_option("--instances", grad.instances)->capture_default_str();
    grad_cmd->add_option("--step", grad.step)->capture_default_str();
    grad_cmd->add_option("--seed", grad.seed)->capture_default_str();
    grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "Print a feature file header");
    inspect_cmd->add_option("file", inspect_path)->required();

    InitWeightsOptions init;
    auto* init_cmd = app.add_subcommand("init-weights", "Write seeded random SAC weights");
    init_cmd->add_option("--channels", init.shape.channels, "Field channels d")->required();
    init_cmd->add_option("--reduced", init.shape.reduced)->capture_default_str();
    init_cmd->add_option("--hidden", init.shape.hidden)->capture_default_str();
    init_cmd->add_option("--classes", init.shape.classes)->capture_default_str();
    init_cmd->add_option("--seed", init.seed)->capture_default_str();
    init_cmd->add_option("--out", init.out)->capture_default_str();

    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*eval_cmd) return run_eval(eval, out, err);
        if (*synth_cmd) return run_synth(synth, out);
        if (*loc_cmd) return run_localize(loc, out);
        if (*grad_cmd) return run_gradcheck(grad, tolerance, out);
        if (*inspect_cmd) return run_inspect(inspect_path, out);
        if (*init_cmd) return run_init_weights(init, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitUsage;
}

} // namespace dalign
