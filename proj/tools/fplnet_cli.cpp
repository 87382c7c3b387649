#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fplnet/analysis.hpp"
#include "fplnet/checkpoint.hpp"
#include "fplnet/config.hpp"
#include "fplnet/data.hpp"
#include "fplnet/metrics.hpp"
#include "fplnet/train.hpp"

namespace fs = std::filesystem;
using namespace fplnet;
using nlohmann::json;

namespace {

struct Globals {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "fplnet_out";
    std::string dtype = "f32";
};

RunConfig resolve_config(const Globals& g) {
    RunConfig rc;
    if (!g.config_path.empty()) {
        std::ifstream is(g.config_path);
        if (!is) throw ConfigError("cannot open config '" + g.config_path + "'");
        apply_config_text(rc, is, g.config_path);
    }
    if (!g.sets.empty()) {
        std::string text;
        for (const auto& s : g.sets) text += s + "\n";
        std::istringstream is(text);
        apply_config_text(rc, is, "--set");
    }
    if (g.seed) {
        rc.net.seed = *g.seed;
        rc.data.seed = *g.seed;
    }
    return rc;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    os << text;
}

/// Logs the resolved configuration and stores it next to the outputs.
fs::path prepare(const Globals& g, const RunConfig& rc) {
    const fs::path out(g.out_dir);
    fs::create_directories(out);
    const std::string text = format_run_config(rc);
    std::cerr << "# resolved config (dtype=" << g.dtype << ")\n" << text;
    write_text(out / "resolved_config.cfg", text);
    return out;
}

Shape parse_input(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ConfigError("--input expects HxW, got '" + s + "'");
    try {
        return Shape{1, 3, std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
    } catch (const std::logic_error&) {
        throw ConfigError("--input expects HxW, got '" + s + "'");
    }
}

CountConvention parse_convention(const std::string& s) {
    if (s == "trainable") return CountConvention::trainable;
    if (s == "weights_only") return CountConvention::weights_only;
    throw ConfigError("unknown convention '" + s + "' (expected trainable or weights_only)");
}

std::vector<std::string> split_commas(const std::string& s) {
    // Commas inside "stages:a,b" belong to the ablation.
    std::vector<std::string> out;
    std::string cur;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == ',' && cur.rfind("stages:", 0) != 0) {
            out.push_back(cur), cur.clear();
        } else if (s[i] == ',' && cur.find(',') != std::string::npos) {
            out.push_back(cur), cur.clear();
        } else {
            cur += s[i];
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

double module_gridding(const NetworkConfig& cfg) {
    const std::size_t c = cfg.stage2_channels;
    if (cfg.module_kind == ModuleKind::esp) {
        EspConfig e = EspConfig::module(c, c);
        e.split_remainder = true;
        ParameterStore<double> store;
        Rng rng(0);
        EspBlock<double> block(store, "esp", e, rng);
        return gridding_diagnostic(block).score;
    }
    FplConfig f = FplConfig::module(c, c);
    f.branches = cfg.branches;
    f.dilations = cfg.dilations;
    f.factorize_bank = cfg.factorization != Factorization::none;
    f.factorize_stage1 = cfg.factorization == Factorization::all;
    return fpl_gridding(f, cfg.module_fusion).score;
}

json miou_json(const MiouResult& r) {
    json per = json::array();
    for (const auto& v : r.per_class) per.push_back(v ? json(*v) : json(nullptr));
    return {{"miou", r.miou}, {"present_classes", r.present}, {"per_class_iou", per}};
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

// ---------------------------------------------------------------------------

int cmd_summarize(const Globals& g, const std::string& input, const std::string& ablation, const std::string& conv) {
    const RunConfig rc = resolve_config(g);
    const fs::path out = prepare(g, rc);
    const auto net = build_variant<float>(rc.net, ablation);
    const Summary s = summarize(*net, parse_input(input), parse_convention(conv));
    std::cout << summary_text(s);
    write_text(out / "summary.json", summary_json(s).dump(2) + "\n");
    return 0;
}

int cmd_count(const std::string& module, std::uint64_t ci, std::uint64_t co, std::uint64_t k, std::uint64_t b) {
    std::cout << symbolic_param_count(parse_module_formula(module), ci, co, k, b) << "\n";
    return 0;
}

int cmd_rf(const Globals& g, const std::string& ablation) {
    const RunConfig rc = resolve_config(g);
    prepare(g, rc);
    const auto net = build_variant<float>(rc.net, ablation);
    const RfReport r = receptive_field(*net);
    std::cout << std::left << std::setw(4) << "#" << std::setw(34) << "layer" << std::right << std::setw(10) << "RF h"
              << std::setw(10) << "RF w" << std::setw(8) << "jump" << "\n";
    for (std::size_t i = 0; i < r.rows.size(); ++i)
        std::cout << std::left << std::setw(4) << i + 1 << std::setw(34) << r.rows[i].name << std::right << std::setw(10)
                  << r.rows[i].rf_h << std::setw(10) << r.rows[i].rf_w << std::setw(8) << r.rows[i].jump_h << "\n";
    std::cout << "receptive field: " << r.rf_h() << " x " << r.rf_w() << "\n";
    return 0;
}

int cmd_grid_check(std::size_t ci, std::size_t co, std::size_t b) {
    FplConfig f = FplConfig::module(ci, co);
    f.branches = b;
    f.dilations.clear();
    for (std::size_t i = 0; i < b; ++i) f.dilations.push_back(std::size_t{1} << i);
    for (auto fusion : {Fusion::pff, Fusion::hff, Fusion::none})
        std::cout << "fpl " << fusion_name(fusion) << ": " << fixed(fpl_gridding(f, fusion).score) << "\n";
    std::cout << "dense conv 3x3: " << fixed(gridding_diagnostic(3, 3, 1).score) << "\n";
    return 0;
}

template <typename T>
int train_toy(const Globals& g, RunConfig rc, const std::string& data_dir, bool downscale) {
    std::vector<Sample> train, val;
    if (!data_dir.empty()) {
        rc.net.num_classes = kCityscapesClasses;
        rc.data.num_classes = kCityscapesClasses;
        for (const auto& p : load_cityscapes_dir(data_dir, "train")) train.push_back(load_cityscapes_sample(p, downscale));
        for (const auto& p : load_cityscapes_dir(data_dir, "val")) val.push_back(load_cityscapes_sample(p, downscale));
    } else {
        std::tie(train, val) = toy_datasets(rc);
    }
    const fs::path out = prepare(g, rc);
    std::ofstream csv(out / "train_log.csv");
    csv << "stage,iter,lr,loss\n";
    const auto start = std::chrono::steady_clock::now();
    const auto result = run_toy_protocol<T>(rc, train, val, [&](const TrainLogEntry& e) {
        csv << e.stage << "," << e.iter << "," << std::setprecision(10) << e.lr << "," << e.loss << "\n";
        if (e.iter % rc.toy.log_every == 0)
            std::cout << e.stage << " iter " << e.iter << " lr " << std::setprecision(6) << e.lr << " loss " << e.loss
                      << std::endl;
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_checkpoint(*result.encoder, (out / "encoder.ckpt").string());
    save_checkpoint(*result.full, (out / "checkpoint.ckpt").string());
    json m;
    m["val"] = miou_json(result.val);
    m["train_subset"] = miou_json(result.train_subset);
    m["class_frequencies"] = result.class_frequencies;
    m["class_weights"] = result.weights.w_class;
    m["train_images"] = train.size();
    m["val_images"] = val.size();
    m["seconds"] = secs;
    write_text(out / "metrics.json", m.dump(2) + "\n");
    std::cout << "val mIoU " << fixed(result.val.miou) << " train-subset mIoU " << fixed(result.train_subset.miou)
              << " (" << fixed(secs, 1) << " s)\n";
    return 0;
}

template <typename T>
int infer(const Globals& g, const std::string& ckpt, const std::vector<std::string>& images,
          const std::vector<std::string>& labels, bool label_ids) {
    const RunConfig rc = resolve_config(g);
    const fs::path out = prepare(g, rc);
    if (!labels.empty() && labels.size() != images.size())
        throw ConfigError("infer: " + std::to_string(labels.size()) + " label files for " +
                          std::to_string(images.size()) + " images");
    const auto net = load_checkpoint<T>(ckpt);
    std::vector<LabelMap> preds, truth;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor<float> image = read_ppm(images[i]);
        LabelMap pred = net->predict(image.cast<T>());
        const std::string stem = fs::path(images[i]).stem().string();
        write_pgm_labels((out / (stem + "_labels.pgm")).string(), pred);
        write_ppm((out / (stem + "_overlay.ppm")).string(), color_overlay(image, pred));
        std::cout << images[i] << " -> " << (out / (stem + "_labels.pgm")).string() << "\n";
        if (!labels.empty()) {
            LabelMap lab = read_pgm_labels(labels[i]);
            if (label_ids)
                for (auto& v : lab.data) v = cityscapes_train_id(v);
            truth.push_back(std::move(lab));
            preds.push_back(std::move(pred));
        }
    }
    if (!labels.empty()) {
        const MiouResult r = miou(preds, truth, net->config().num_classes);
        std::cout << "mIoU " << fixed(r.miou) << "\n";
        write_text(out / "infer_metrics.json", miou_json(r).dump(2) + "\n");
    }
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& list, bool train) {
    const RunConfig rc = resolve_config(g);
    prepare(g, rc);
    std::cout << std::left << std::setw(28) << "ablation" << std::right << std::setw(12) << "params" << std::setw(10)
              << "RF" << std::setw(10) << "gridding";
    if (train) std::cout << std::setw(10) << "val mIoU";
    std::cout << "\n";
    for (const auto& name : split_commas(list)) {
        const NetworkConfig cfg = apply_ablation(rc.net, name);
        const auto net = build_fplnet<float>(cfg);
        const RfReport r = receptive_field(*net);
        std::cout << std::left << std::setw(28) << name << std::right << std::setw(12) << count_params(*net).total
                  << std::setw(10) << r.rf_h() << std::setw(10) << fixed(module_gridding(cfg));
        if (train) {
            RunConfig v = rc;
            v.net = cfg;
            std::cout << std::setw(10) << fixed(run_toy_protocol<float>(v).val.miou);
        }
        std::cout << std::endl;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FPLNet engine and architecture analysis"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--set", g.sets, "extra key=value override (repeatable)");
    auto* seed_opt = app.add_option("--seed", seed, "overrides net.seed and data.seed");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--dtype", g.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));

    std::string input = "512x1024", ablation = "default", convention = "trainable";
    auto* summ = app.add_subcommand("summarize", "layer table with shapes and parameter counts");
    summ->add_option("--input", input, "HxW");
    summ->add_option("--ablation", ablation);
    summ->add_option("--convention", convention, "trainable or weights_only");

    std::string module = "fpl";
    std::uint64_t ci = 60, co = 60, k = 3, b = 4;
    auto* count = app.add_subcommand("count", "closed-form module weight count");
    count->add_option("--module", module, "conv, esp, fpl_decomp or fpl");
    count->add_option("--ci", ci);
    count->add_option("--co", co);
    count->add_option("--k", k);
    count->add_option("--b", b);

    std::string data_dir;
    bool downscale = false;
    auto* toy = app.add_subcommand("train-toy", "two-stage training on synthetic or Cityscapes-layout data");
    toy->add_option("--data-dir", data_dir, "Cityscapes-layout root with PPM images and PGM labels");
    toy->add_flag("--downscale", downscale, "halve Cityscapes images before training");

    std::string ckpt;
    std::vector<std::string> images, labels;
    bool label_ids = false;
    auto* inf = app.add_subcommand("infer", "predict label maps from a checkpoint");
    inf->add_option("--checkpoint", ckpt)->required();
    inf->add_option("images", images, "PPM images")->required();
    inf->add_option("--labels", labels, "PGM ground truth, one per image");
    inf->add_flag("--label-ids", label_ids, "ground truth holds Cityscapes label ids");

    std::string ablations = "default";
    bool ablate_train = false;
    auto* abl = app.add_subcommand("ablate", "parameters, receptive field and gridding per ablation");
    abl->add_option("--ablation", ablations, "comma-separated ablation names");
    abl->add_flag("--train", ablate_train, "also run the toy protocol per ablation");

    std::string rf_ablation = "default";
    auto* rf = app.add_subcommand("rf", "receptive field per layer");
    rf->add_option("--ablation", rf_ablation);

    std::size_t gci = 64, gco = 64, gb = 4;
    auto* grid = app.add_subcommand("grid-check", "gridding score of an FPL module under each fusion");
    grid->add_option("--ci", gci);
    grid->add_option("--co", gco);
    grid->add_option("--b", gb);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    if (*seed_opt) g.seed = seed;

    try {
        const bool f64 = g.dtype == "f64";
        if (*summ) return cmd_summarize(g, input, ablation, convention);
        if (*count) return cmd_count(module, ci, co, k, b);
        if (*toy) {
            const RunConfig rc = resolve_config(g);
            return f64 ? train_toy<double>(g, rc, data_dir, downscale) : train_toy<float>(g, rc, data_dir, downscale);
        }
        if (*inf) return f64 ? infer<double>(g, ckpt, images, labels, label_ids) : infer<float>(g, ckpt, images, labels, label_ids);
        if (*abl) return cmd_ablate(g, ablations, ablate_train);
        if (*rf) return cmd_rf(g, rf_ablation);
        if (*grid) return cmd_grid_check(gci, gco, gb);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
