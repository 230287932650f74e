// ccnn: train and run the cascaded player detector on synthetic scenes.
//
// Subcommands: synth, train, detect, eval, selfcheck. Every run is fully
// determined by --seed; repeating a command with the same flags reproduces
// byte-identical outputs.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ccnn/dense.hpp"
#include "ccnn/metrics.hpp"
#include "ccnn/model_io.hpp"
#include "ccnn/selfcheck.hpp"
#include "ccnn/synth.hpp"
#include "ccnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace ccnn;

namespace {

struct CommonOpts {
    std::uint64_t seed = 42;
    std::string precision = "single";
};

struct SynthOpts {
    std::string out;
    int scenes = 24;
    SceneParams params;
};

struct TrainOpts {
    std::string data;
    std::string model = "model.ccnn";
    std::string phase = "all";
    std::string log;
    std::vector<int> config{16, 16, 16, 16};
    TrainConfig tc;
    SampleParams sampling;
    double valFraction = 0.2;
};

struct DetectOpts {
    std::string model;
    std::string data;
    std::string image;
    std::string split = "test";
    std::string out = "detections.csv";
    std::string overlay;
    DetectParams params;
    double minScore = 0.5;
};

struct EvalOpts {
    std::string model;
    std::string data;
    std::string split = "test";
    std::string roc = "roc.csv";
    std::string report = "report.csv";
    std::string detections;
    double iouThreshold = 0.7;
    SampleParams sampling;
};

std::vector<int> split_scene_ids(const Dataset& ds, int which) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < ds.split.size(); ++i) {
        if (which < 0 || ds.split[i] == which) ids.push_back(static_cast<int>(i));
    }
    return ids;
}

Scene load_scene(const Dataset& ds, int id) {
    Scene s;
    s.image = ppm_read(ds.root + "/" + ds.images[static_cast<std::size_t>(id)]);
    s.boxes = ds.boxes[static_cast<std::size_t>(id)];
    return s;
}

template <typename T>
SampleSet<T> sample_split(const Dataset& ds, const std::vector<int>& ids,
                          const SampleParams& sp) {
    SampleSet<T> set;
    for (int id : ids) {
        Scene scene = load_scene(ds, id);
        append_patches(set, scene, id, sp);
    }
    return set;
}

// Holds back a deterministic fifth of the train scenes for calibration.
void carve_validation(std::vector<int>& train, std::vector<int>& val, std::uint64_t seed,
                      double fraction) {
    std::vector<int> ids = train;
    Rng rng(Rng::derive(seed, 0xA11DA7));
    for (std::size_t i = ids.size(); i > 1; --i) {
        std::swap(ids[i - 1], ids[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    }
    const std::size_t nVal =
        std::max<std::size_t>(1, static_cast<std::size_t>(ids.size() * fraction));
    val.assign(ids.end() - static_cast<std::ptrdiff_t>(nVal), ids.end());
    train.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(nVal));
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
}

int run_synth(const SynthOpts& opt) {
    write_dataset(opt.out, opt.params, opt.scenes);
    std::cout << "synth: wrote " << opt.scenes << " scenes to " << opt.out << "\n";
    return 0;
}

template <typename T>
int run_train(const TrainOpts& opt) {
    Dataset ds = load_dataset(opt.data);
    std::vector<int> trainIds = split_scene_ids(ds, 0);
    if (trainIds.empty()) throw std::runtime_error("train: dataset has no train scenes");
    std::vector<int> valIds;
    carve_validation(trainIds, valIds, opt.tc.seed, opt.valFraction);

    const bool fresh = opt.phase == "all" || opt.phase == "branches";
    CascadeNetwork<T> net = [&] {
        if (fresh) {
            CascadeConfig cfg;
            for (int j = 0; j < kStages; ++j) {
                cfg.trunkFilters[static_cast<std::size_t>(j)] =
                    opt.config[static_cast<std::size_t>(j)];
            }
            return build_network<T>(cfg, opt.tc.seed);
        }
        return load_model<T>(opt.model);
    }();

    std::ofstream log;
    if (!opt.log.empty()) {
        log.open(opt.log, std::ios::app);
        if (!log) throw std::runtime_error("train: cannot open log " + opt.log);
    }
    std::ostream* logp = opt.log.empty() ? nullptr : &log;

    if (opt.phase == "all" || opt.phase == "branches" || opt.phase == "e2e") {
        SampleSet<T> trainSet = sample_split<T>(ds, trainIds, opt.sampling);
        std::cout << "train: " << trainSet.size() << " patches from " << trainIds.size()
                  << " scenes\n";
        if (opt.phase == "all" || opt.phase == "branches") {
            train_branches(net, trainSet, opt.tc, logp);
        }
        if (opt.phase == "all" || opt.phase == "e2e") {
            train_end_to_end(net, trainSet, opt.tc, logp);
        }
    }
    if (opt.phase == "all" || opt.phase == "calibrate") {
        SampleSet<T> valSet = sample_split<T>(ds, valIds, opt.sampling);
        auto lambdas = calibrate_thresholds(net, valSet, opt.tc.recallFloor);
        std::printf("train: calibrated lambdas %.2f %.2f %.2f %.2f on %zu validation patches\n",
                    lambdas[0], lambdas[1], lambdas[2], lambdas[3], valSet.size());
    }
    save_model(net, opt.model);
    std::cout << "train: saved " << opt.model << " (" << net.parameter_count() << " parameters, "
              << weight_payload_bytes(net) << " weight bytes)\n";
    return 0;
}

template <typename T>
int run_detect(const DetectOpts& opt) {
    CascadeNetwork<T> net = load_model<T>(opt.model);
    DetectParams params = opt.params;
    params.minScore = opt.minScore;

    std::vector<std::pair<std::string, Scene>> scenes;
    if (!opt.image.empty()) {
        Scene s;
        s.image = ppm_read(opt.image);
        scenes.emplace_back(opt.image, std::move(s));
    } else {
        if (opt.data.empty()) throw std::runtime_error("detect: need --data or --image");
        Dataset ds = load_dataset(opt.data);
        const int which = opt.split == "all" ? -1 : (opt.split == "train" ? 0 : 1);
        for (int id : split_scene_ids(ds, which)) {
            scenes.emplace_back(ds.images[static_cast<std::size_t>(id)], load_scene(ds, id));
        }
    }
    if (scenes.empty()) throw std::runtime_error("detect: nothing to process");
    if (!opt.overlay.empty()) fs::create_directories(opt.overlay);

    std::ofstream out(opt.out);
    if (!out) throw std::runtime_error("detect: cannot open " + opt.out);
    out << "image,x,y,size,score,level\n";

    DenseStats total;
    std::size_t boxCount = 0;
    char buf[224];
    for (auto& [name, scene] : scenes) {
        Tensor<T> image = image_to_tensor<T>(scene.image);
        DetectResult res = pyramid_detect(net, image, net.thresholds, params);
        total.add(res.stats);
        for (const DetectionBox& b : res.boxes) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%.6f,%d\n", name.c_str(), b.x, b.y,
                          b.size, b.score, b.level);
            out << buf;
            ++boxCount;
        }
        if (!opt.overlay.empty()) {
            Image8 painted = scene.image;
            for (const DetectionBox& b : res.boxes) {
                draw_box_outline(painted, GtBox{b.x, b.y, b.size}, 230, 40, 40);
            }
            ppm_write(painted, (fs::path(opt.overlay) / fs::path(name).filename()).string());
        }
    }
    const double ratio =
        total.macsNoExit > 0
            ? static_cast<double>(total.macs) / static_cast<double>(total.macsNoExit)
            : 1.0;
    std::printf("detect: %zu scenes, %zu boxes, early-exit MACs %.1f%% of no-exit\n",
                scenes.size(), boxCount, 100.0 * ratio);
    return 0;
}

struct DetRow {
    std::string image;
    DetectionBox box;
};

std::vector<DetRow> read_detections_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("eval: cannot open detections " + path);
    std::vector<DetRow> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        DetRow r;
        char image[160];
        double score;
        int x, y, size, level;
        if (std::sscanf(line.c_str(), "%159[^,],%d,%d,%d,%lf,%d", image, &x, &y, &size, &score,
                        &level) != 6) {
            throw std::runtime_error("eval: malformed detection row: " + line);
        }
        r.image = image;
        r.box = {x, y, size, score, level};
        rows.push_back(r);
    }
    return rows;
}

template <typename T>
int run_eval(const EvalOpts& opt) {
    CascadeNetwork<T> net = load_model<T>(opt.model);
    Dataset ds = load_dataset(opt.data);
    const int which = opt.split == "all" ? -1 : (opt.split == "train" ? 0 : 1);
    std::vector<int> ids = split_scene_ids(ds, which);
    if (ids.empty()) throw std::runtime_error("eval: no scenes in split " + opt.split);

    SampleSet<T> patches = sample_split<T>(ds, ids, opt.sampling);
    std::vector<double> scores;
    std::vector<int> labels;
    PatchCache<T> cache;
    for (const auto& s : patches.samples) {
        StageProbs sp = forward_patch(net, s.patch, ForwardMode::AllStages, cache);
        double prod = 1;
        for (int j = 0; j < kStages; ++j) prod *= sp.probs[j];
        scores.push_back(prod);
        labels.push_back(s.label);
    }
    RocCurve curve = roc_points(scores, labels);
    write_roc_csv(curve, opt.roc);
    StageReport report = stage_report(net, patches);
    write_stage_report_csv(report, opt.report);

    std::printf("eval: %zu patches auc=%.4f recall@0.1fpr=%.4f stage4_accuracy=%.4f\n",
                patches.size(), curve.auc, recall_at_fpr(curve, 0.1), report.rows[3].accuracy);

    if (!opt.detections.empty()) {
        std::vector<DetRow> rows = read_detections_csv(opt.detections);
        int tp = 0, fp = 0, fn = 0;
        for (int id : ids) {
            const std::string& name = ds.images[static_cast<std::size_t>(id)];
            std::vector<Rect> det;
            std::vector<double> detScores;
            for (const DetRow& r : rows) {
                if (r.image != name) continue;
                det.push_back({static_cast<double>(r.box.x), static_cast<double>(r.box.y),
                               static_cast<double>(r.box.size), static_cast<double>(r.box.size)});
                detScores.push_back(r.box.score);
            }
            std::vector<Rect> gt;
            for (const GtBox& b : ds.boxes[static_cast<std::size_t>(id)]) {
                gt.push_back({static_cast<double>(b.x), static_cast<double>(b.y),
                              static_cast<double>(b.size), static_cast<double>(b.size)});
            }
            MatchResult m = match_detections(det, detScores, gt, opt.iouThreshold);
            tp += m.tp;
            fp += m.fp;
            fn += m.fn;
        }
        const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        std::printf(
            "eval: detections tp=%d fp=%d fn=%d recall=%.4f fp_per_image=%.3f (iou %.2f)\n", tp,
            fp, fn, recall, static_cast<double>(fp) / static_cast<double>(ids.size()),
            opt.iouThreshold);
    }
    return 0;
}

int run_selfcheck(const CommonOpts& common) {
    bool ok = true;
    for (const CheckResult& r : gradient_checks(common.seed, 120, 1e-6, 1e-5)) {
        std::printf("selfcheck: %-36s %s  (rel err %.3e over %d coords)\n", r.name.c_str(),
                    r.pass ? "pass" : "FAIL", r.maxRelErr, r.coordinates);
        ok = ok && r.pass;
    }
    CheckResult full = full_network_gradient_check(common.seed, 100, 1e-4, 1e-5);
    std::printf("selfcheck: %-36s %s  (rel err %.3e over %d coords)\n", full.name.c_str(),
                full.pass ? "pass" : "FAIL", full.maxRelErr, full.coordinates);
    ok = ok && full.pass;

    CascadeConfig cfg;
    cfg.trunkFilters = {8, 8, 8, 8};
    const double tol = common.precision == "double" ? 1e-10 : 1e-5;
    const double err = common.precision == "double"
                           ? dense_patch_max_error<double>(cfg, common.seed, 2, 96)
                           : dense_patch_max_error<float>(cfg, common.seed, 2, 96);
    std::printf("selfcheck: dense/patch agreement (%s)       %s  (max abs err %.3e, tol %.0e)\n",
                common.precision.c_str(), err <= tol ? "pass" : "FAIL", err, tol);
    ok = ok && err <= tol;
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascaded CNN player detector"};
    app.require_subcommand(1);
    app.fallthrough(true);  // global flags may follow the subcommand
    app.set_config("--config-file", "", "key=value configuration overlay ('#' comments)");

    CommonOpts common;
    app.add_option("--seed", common.seed, "master random seed")->capture_default_str();
    app.add_option("--precision", common.precision, "numeric precision: single|double")
        ->check(CLI::IsMember({"single", "double"}))
        ->capture_default_str();

    SynthOpts synth;
    auto* sc = app.add_subcommand("synth", "generate a synthetic scene dataset");
    sc->add_option("--out", synth.out, "output dataset directory")->required();
    sc->add_option("--scenes", synth.scenes, "number of scenes")->capture_default_str();
    sc->add_option("--width", synth.params.width)->capture_default_str();
    sc->add_option("--height", synth.params.height)->capture_default_str();
    sc->add_option("--players-min", synth.params.playersMin)->capture_default_str();
    sc->add_option("--players-max", synth.params.playersMax)->capture_default_str();
    sc->add_option("--height-min", synth.params.heightMin)->capture_default_str();
    sc->add_option("--height-max", synth.params.heightMax)->capture_default_str();
    sc->add_option("--blur", synth.params.blurProbability)->capture_default_str();
    sc->add_option("--occlusion", synth.params.occlusionProbability)->capture_default_str();
    sc->add_option("--texture", synth.params.textureKind, "0 grass, 1 court")
        ->capture_default_str();

    TrainOpts train;
    auto* tcmd = app.add_subcommand("train", "train the cascade on a dataset");
    tcmd->add_option("--data", train.data, "dataset directory")->required();
    tcmd->add_option("--model", train.model,
                     "model file to write (input too for phase e2e/calibrate)")
        ->capture_default_str();
    tcmd->add_option("--phase", train.phase, "branches|e2e|calibrate|all")
        ->check(CLI::IsMember({"branches", "e2e", "calibrate", "all"}))
        ->capture_default_str();
    tcmd->add_option("--config", train.config, "trunk filter counts, four values")
        ->expected(4)
        ->capture_default_str();
    tcmd->add_option("--epochs-branch", train.tc.epochsBranch)->capture_default_str();
    tcmd->add_option("--epochs-e2e", train.tc.epochsE2E)->capture_default_str();
    tcmd->add_option("--batch", train.tc.batchSize)->capture_default_str();
    tcmd->add_option("--lr", train.tc.learningRate)->capture_default_str();
    tcmd->add_option("--beta", train.tc.beta, "cost-regularizer weight")->capture_default_str();
    tcmd->add_option("--recall-floor", train.tc.recallFloor)->capture_default_str();
    tcmd->add_option("--log", train.log, "append training log lines here");
    tcmd->add_option("--pos-per-box", train.sampling.positivesPerBox)->capture_default_str();
    tcmd->add_option("--neg-per-pos", train.sampling.negativesPerPositive)->capture_default_str();

    DetectOpts detect;
    auto* dcmd = app.add_subcommand("detect", "detect players on scenes or one image");
    dcmd->add_option("--model", detect.model)->required();
    dcmd->add_option("--data", detect.data, "dataset directory (with --split)");
    dcmd->add_option("--image", detect.image, "single PPM image instead of a dataset");
    dcmd->add_option("--split", detect.split, "train|test|all")
        ->check(CLI::IsMember({"train", "test", "all"}))
        ->capture_default_str();
    dcmd->add_option("--out", detect.out, "detections CSV")->capture_default_str();
    dcmd->add_option("--overlay", detect.overlay, "directory for box-overlay PPMs");
    dcmd->add_option("--pyramid-scale", detect.params.scaleFactor)->capture_default_str();
    dcmd->add_option("--nms-iou", detect.params.nmsIou)->capture_default_str();
    dcmd->add_option("--min-score", detect.minScore)->capture_default_str();
    dcmd->add_option("--min-size", detect.params.minSize,
                     "smallest box side to search (< patch size upscales)")
        ->capture_default_str();

    EvalOpts eval;
    auto* ecmd = app.add_subcommand("eval", "patch ROC/AUC, stage report, detection counts");
    ecmd->add_option("--model", eval.model)->required();
    ecmd->add_option("--data", eval.data)->required();
    ecmd->add_option("--split", eval.split)
        ->check(CLI::IsMember({"train", "test", "all"}))
        ->capture_default_str();
    ecmd->add_option("--roc", eval.roc)->capture_default_str();
    ecmd->add_option("--report", eval.report)->capture_default_str();
    ecmd->add_option("--detections", eval.detections, "detections CSV to score against truth");
    ecmd->add_option("--iou", eval.iouThreshold)->capture_default_str();
    ecmd->add_option("--neg-per-pos", eval.sampling.negativesPerPositive)->capture_default_str();

    auto* kcmd = app.add_subcommand("selfcheck", "gradient and dense/patch oracle suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        train.tc.seed = common.seed;
        train.sampling.seed = common.seed;
        eval.sampling.seed = common.seed;
        synth.params.seed = common.seed;
        const bool dbl = common.precision == "double";
        if (sc->parsed()) return run_synth(synth);
        if (tcmd->parsed()) return dbl ? run_train<double>(train) : run_train<float>(train);
        if (dcmd->parsed()) return dbl ? run_detect<double>(detect) : run_detect<float>(detect);
        if (ecmd->parsed()) return dbl ? run_eval<double>(eval) : run_eval<float>(eval);
        if (kcmd->parsed()) return run_selfcheck(common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
