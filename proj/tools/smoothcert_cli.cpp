/*
 * Copyright 2026 The smoothcert Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// smoothcert command-line tool: train, sigma, certify, bound, report.
//
// Every subcommand accepts --config FILE with key=value lines named after the
// long flags. Precedence: flag > config file > SMOOTHCERT_SEED (seed only) >
// built-in default. The resolved settings are written next to the outputs.
//
// Exit codes: 0 success, 1 computational failure, 2 usage or input error.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smoothcert/smoothcert.hpp"

namespace fs = std::filesystem;
using namespace smoothcert;

namespace {

/// Bad input from the operator: missing files, inconsistent settings.
class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- config file

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// key=value pairs; '#' comments and [section] lines are skipped. Quotes
/// around values and list brackets are removed.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot read config file " + p.string());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(p.string() + ":" + std::to_string(no) + ": expected key=value");
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        if (val.size() >= 2 && ((val.front() == '"' && val.back() == '"') || (val.front() == '[' && val.back() == ']'))) {
            val = val.substr(1, val.size() - 2);
            val.erase(std::remove(val.begin(), val.end(), ' '), val.end());
        }
        while (!key.empty() && key.front() == '-') key.erase(key.begin());
        out.emplace_back(key, val);
    }
    return out;
}

/// Appends `--key=value` for every config entry whose flag is absent from
/// the command line, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::vector<std::string> out;
    std::string config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            out.push_back(args[i]);
        }
    }
    if (config.empty()) return out;
    auto given = [&](const std::string& key) {
        const std::string flag = "--" + key;
        return std::any_of(out.begin(), out.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    for (const auto& [key, val] : read_config_file(config))
        if (!given(key)) out.push_back("--" + key + "=" + val);
    return out;
}

// ---------------------------------------------------------------- shared options

struct DataOptions {
    std::string images;
    std::string labels;
    std::size_t offset = 0;
    std::size_t limit = 0;  // 0 = to the end

    void add(CLI::App* app) {
        app->add_option("--images", images, "IDX image file")->required()->check(CLI::ExistingFile);
        app->add_option("--labels", labels, "IDX label file")->required()->check(CLI::ExistingFile);
        app->add_option("--offset", offset, "first sample used")->capture_default_str();
        app->add_option("--limit", limit, "number of samples used (0 = all after offset)")->capture_default_str();
    }

    Dataset load() const {
        Dataset all = load_idx(images, labels);
        if (offset >= all.size())
            throw UsageError("--offset " + std::to_string(offset) + " is past the end of the dataset (" +
                             std::to_string(all.size()) + " samples)");
        const std::size_t count = limit == 0 ? all.size() - offset : limit;
        Dataset ds = all.slice(offset, count);
        ds.validate();
        return ds;
    }
};

WeightNoiseMode parse_sampler(const std::string& s) {
    if (s == "reparameterized") return WeightNoiseMode::reparameterized;
    if (s == "explicit") return WeightNoiseMode::explicit_weights;
    if (s == "cached") return WeightNoiseMode::cached;
    throw UsageError("unknown sampler '" + s + "'");
}

const std::vector<std::string> kSamplers = {"reparameterized", "explicit", "cached"};

Checkpoint load_model(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
    return load_checkpoint(path);
}

void check_compatible(const MlpModel& m, const Dataset& ds) {
    if (m.raw_input_dim() != ds.dim())
        throw UsageError("dataset has " + std::to_string(ds.dim()) + " features but the model expects " +
                         std::to_string(m.raw_input_dim()));
    if (ds.num_classes > m.num_classes())
        throw UsageError("dataset has more classes than the model outputs");
}

void write_resolved(const CLI::App* sub, const fs::path& out_dir) {
    auto out = io_detail::open_out(out_dir / (sub->get_name() + "_config.txt"));
    out << "# resolved settings of `smoothcert " << sub->get_name() << "`\n" << sub->config_to_str(true, false);
}

std::vector<std::size_t> parse_sizes(const std::string& s, const char* what) {
    std::vector<std::size_t> v;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        tok = trim(tok);
        if (tok.empty()) continue;
        std::size_t pos = 0;
        unsigned long long x = 0;
        try {
            x = std::stoull(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != tok.size() || x == 0) throw UsageError(std::string(what) + ": bad entry '" + tok + "'");
        v.push_back(static_cast<std::size_t>(x));
    }
    return v;
}

/// "10:10,20:10" -> {{10, 10}, {20, 10}}
std::vector<LrDrop> parse_lr_drops(const std::string& s) {
    std::vector<LrDrop> v;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        tok = trim(tok);
        if (tok.empty()) continue;
        const auto c = tok.find(':');
        if (c == std::string::npos) throw UsageError("--lr-drops: expected epoch:divisor, got '" + tok + "'");
        try {
            v.push_back({static_cast<std::size_t>(std::stoull(tok.substr(0, c))), std::stod(tok.substr(c + 1))});
        } catch (const std::exception&) {
            throw UsageError("--lr-drops: bad entry '" + tok + "'");
        }
    }
    return v;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    DataOptions data;
    std::string out = "run";
    std::string hidden = "32,32,32";
    std::size_t epochs = 30;
    std::size_t batch_size = 256;
    double lr = 0.1;
    std::string lr_drops = "10:10,20:10";
    double momentum = 0.9;
    double weight_decay = 0.0;
    double alpha = 0.1;
    double sigma2 = 0.12;
    std::uint64_t seed = 0;
};

const std::string_view kSpectralEpochHeader = "epoch,collapsed_spectral,product_spectral,mean_abs_cosine,reg_value";

int run_train(const TrainArgs& a, const CLI::App* sub) {
    const Dataset ds = a.data.load();
    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.lr = a.lr;
    cfg.lr_drops = parse_lr_drops(a.lr_drops);
    cfg.momentum = a.momentum;
    cfg.weight_decay = a.weight_decay;
    cfg.alpha = a.alpha;
    cfg.noise_variance = a.sigma2;
    cfg.seed = a.seed;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    std::vector<std::size_t> dims = {ds.dim()};
    for (std::size_t h : parse_sizes(a.hidden, "--hidden")) dims.push_back(h);
    dims.push_back(ds.num_classes);

    const fs::path out = a.out;
    fs::create_directories(out);
    write_resolved(sub, out);

    Trainer trainer(MlpModel::init(dims, a.seed), ds, cfg);
    std::vector<EpochMetrics> metrics;
    auto spec = io_detail::open_out(out / "spectral_epochs.csv");
    spec << kSpectralEpochHeader << '\n';
    nlohmann::json meta = {{"alpha", a.alpha}, {"sigma2", a.sigma2}, {"seed", a.seed}, {"train_samples", ds.size()}};
    while (!trainer.done()) {
        try {
            metrics.push_back(trainer.run_epoch());
        } catch (const TrainingDiverged& e) {
            std::cerr << "error: " << e.what() << "; " << (out / "model.smc").string()
                      << " holds the last completed epoch\n";
            return 1;
        }
        const auto& m = metrics.back();
        const SpectralReport r = spectral_report(trainer.model());
        spec << m.epoch << ',' << format_double(r.collapsed_spectral) << ',' << format_double(r.product_spectral) << ','
             << format_double(r.mean_offdiag_abs_cosine()) << ',' << format_double(m.reg_value) << '\n';
        meta["epochs_completed"] = m.epoch;
        save_checkpoint(out / "model.smc", trainer.model(), meta);
        write_metrics_csv(out / "metrics.csv", metrics);
        std::cout << "epoch " << m.epoch << "  loss " << m.loss << "  train_acc " << m.train_acc << "  reg "
                  << m.reg_value << "  " << m.seconds << "s\n";
    }
    return 0;
}

// ---------------------------------------------------------------- sigma

struct SigmaArgs {
    DataOptions data;
    std::string checkpoint;
    std::string out = "run";
    double grid_min = 0.01;
    double grid_max = 1.0;
    double grid_step = 0.01;
    std::size_t samples = 50;
    double tolerance = 0.02;
    std::size_t eval_subset = 2048;
    bool full_scan = false;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
};

int run_sigma(const SigmaArgs& a, const CLI::App* sub) {
    const Checkpoint ck = load_model(a.checkpoint);
    const Dataset ds = a.data.load();
    check_compatible(ck.model, ds);
    if (!(a.grid_step > 0.0 && a.grid_min > 0.0 && a.grid_max >= a.grid_min))
        throw UsageError("need 0 < --grid-min <= --grid-max and --grid-step > 0");
    SigmaSearchConfig cfg;
    cfg.grid.clear();
    for (std::size_t i = 0;; ++i) {
        const double g = a.grid_min + static_cast<double>(i) * a.grid_step;
        if (g > a.grid_max * (1.0 + 1e-12)) break;
        cfg.grid.push_back(g);
    }
    cfg.samples = a.samples;
    cfg.tolerance = a.tolerance;
    cfg.eval_subset = a.eval_subset;
    cfg.full_scan = a.full_scan;
    cfg.workers = a.workers;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const fs::path out = a.out;
    fs::create_directories(out);
    write_resolved(sub, out);

    const SigmaSelection sel = select_sigma(ck.model, ds, cfg, a.seed);
    write_sigma_trace_csv(out / "sigma_trace.csv", sel.trace);
    write_json(out / "sigma.json", {{"sigma2", sel.sigma2},
                                    {"sigma", std::sqrt(sel.sigma2)},
                                    {"flagged", sel.flagged},
                                    {"base_accuracy", sel.base_accuracy},
                                    {"tolerance", cfg.tolerance},
                                    {"samples", cfg.samples}});
    if (sel.flagged)
        std::cerr << "warning: no grid variance kept the accuracy drop within " << cfg.tolerance
                  << "; falling back to the grid minimum\n";
    std::cout << format_double(sel.sigma2) << '\n';
    return 0;
}

// ---------------------------------------------------------------- certify

struct CertifyArgs {
    DataOptions data;
    std::string checkpoint;
    std::string out = "run";
    double sigma2 = 0.0;
    std::string sigma_json;
    std::uint64_t n0 = 100;
    std::uint64_t n = 100000;
    double alpha_b = 0.001;
    std::size_t subsample = 0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string sampler = "reparameterized";
    std::size_t cache_size = 1000;
    double radius_step = 0.05;
    double max_radius = 0.0;
};

double resolve_sigma2(double flag, const std::string& json_path) {
    if (flag > 0.0) return flag;
    if (json_path.empty()) throw UsageError("give --sigma2 or --sigma-json");
    std::ifstream in(json_path);
    if (!in) throw UsageError("cannot read " + json_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        return j.at("sigma2").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(json_path + ": " + e.what());
    }
}

int run_certify(const CertifyArgs& a, const CLI::App* sub) {
    const Checkpoint ck = load_model(a.checkpoint);
    const Dataset ds = a.data.load();
    check_compatible(ck.model, ds);
    const double sigma2 = resolve_sigma2(a.sigma2, a.sigma_json);
    if (!(sigma2 > 0.0)) throw UsageError("sigma2 must be > 0");
    if (!(a.alpha_b > 0.0 && a.alpha_b < 1.0)) throw UsageError("--alpha-b must be in (0, 1)");
    if (!(a.radius_step > 0.0)) throw UsageError("--radius-step must be > 0");

    NoiseConfig noise = NoiseConfig::isotropic(std::sqrt(sigma2), a.seed);
    noise.mode = parse_sampler(a.sampler);
    if (noise.mode == WeightNoiseMode::cached)
        noise.cache = make_weight_noise_cache(ck.model, noise.sigma_weight, a.cache_size, a.seed);

    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (a.subsample > 0 && a.subsample < ds.size()) {
        auto eng = make_stream(a.seed, 0, Phase::data);
        std::shuffle(idx.begin(), idx.end(), eng);
        idx.resize(a.subsample);
        std::sort(idx.begin(), idx.end());
    }

    const fs::path out = a.out;
    fs::create_directories(out);
    write_resolved(sub, out);

    const auto samples = certify_dataset(ck.model, ds, idx, noise, a.n0, a.n, a.alpha_b, a.workers);
    write_certify_csv(out / "certify.csv", samples);

    double top = a.max_radius;
    if (top <= 0.0)
        for (const auto& s : samples) top = std::max(top, s.result.radius);
    top = a.radius_step * std::ceil(top / a.radius_step);
    const auto curve = certified_accuracy_curve(samples, radius_grid(top, a.radius_step));
    write_curve_csv(out / "curve.csv", curve);
    const std::vector<PlotSeries> series = {{fs::path(a.checkpoint).parent_path().filename().string(), curve}};
    PlotOptions opt;
    opt.title = "Certified accuracy, sigma^2 = " + format_double(sigma2);
    emit_plot(series, out / "curve.svg", opt);

    std::size_t certified = 0, correct = 0;
    for (const auto& s : samples) {
        certified += !s.result.abstain();
        correct += s.correct();
    }
    std::cout << "certified " << certified << "/" << samples.size() << ", correct " << correct << "/" << samples.size()
              << '\n';
    return 0;
}

// ---------------------------------------------------------------- bound

struct BoundArgs {
    DataOptions data;
    std::string checkpoint;
    std::string out = "run";
    double gamma = 1.0;
    double delta = 0.05;
    double sigma2 = 0.12;
    std::uint64_t margin_votes = 100;
    std::optional<double> pa;
    std::optional<double> pb;
    std::uint64_t seed = 0;
};

int run_bound(const BoundArgs& a, const CLI::App* sub) {
    if (!(a.gamma > 0.0)) throw UsageError("--gamma must be > 0 (got " + format_double(a.gamma) + ")");
    if (!(a.delta > 0.0 && a.delta < 1.0)) throw UsageError("--delta must be in (0, 1)");
    if (a.pa.has_value() != a.pb.has_value()) throw UsageError("--pa and --pb go together");
    const Checkpoint ck = load_model(a.checkpoint);
    const Dataset ds = a.data.load();
    check_compatible(ck.model, ds);
    const MlpModel& m = ck.model;

    const SpectralReport spec = spectral_report(m);
    BoundInputs in;
    in.gamma = a.gamma;
    in.delta = a.delta;
    in.m = ds.size();
    in.B = ds.max_input_norm(m.augmented_input());
    in.n = m.num_layers();
    in.h = m.hidden_width();
    in.d = m.input_dim();
    in.per_layer_spectral = spec.per_layer_spectral;
    in.per_layer_frobenius = spec.per_layer_frobenius;
    try {
        in.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    double margin_loss = 0.0;
    if (a.margin_votes > 0)
        margin_loss = empirical_margin_loss(m, ds, a.gamma, a.margin_votes,
                                            NoiseConfig::isotropic(std::sqrt(a.sigma2), a.seed), a.seed);
    const BoundReport rep = evaluate_bounds(in, margin_loss, a.pa, a.pb);

    const fs::path out = a.out;
    fs::create_directories(out);
    write_resolved(sub, out);
    nlohmann::json j = rep;
    j["spectral"] = spec;
    j["checkpoint"] = a.checkpoint;
    j["margin_votes"] = a.margin_votes;
    j["margin_noise_sigma2"] = a.sigma2;
    write_json(out / "bound.json", j);
    std::cout << "psi " << rep.psi << "  bound " << (std::isfinite(rep.bound_value) ? format_double(rep.bound_value) : "inf")
              << (rep.vacuous ? "  (vacuous)" : "") << '\n';
    return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out = "report";
};

struct Run {
    std::string name;
    fs::path dir;
    std::vector<CurvePoint> curve;
};

std::vector<Run> discover_runs(const std::vector<std::string>& paths) {
    std::vector<Run> runs;
    for (const auto& p : paths) {
        const fs::path dir = p;
        if (!fs::is_directory(dir)) throw UsageError("not a directory: " + p);
        if (fs::exists(dir / "curve.csv")) {
            runs.push_back({dir.filename().string(), dir, {}});
            continue;
        }
        std::vector<fs::path> subs;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_directory() && fs::exists(e.path() / "curve.csv")) subs.push_back(e.path());
        std::sort(subs.begin(), subs.end());
        if (subs.empty()) throw UsageError(p + ": no curve.csv in the directory or its subdirectories");
        for (const auto& s : subs) runs.push_back({s.filename().string(), s, {}});
    }
    for (auto& r : runs) {
        r.curve = read_curve_csv(r.dir / "curve.csv");
        if (r.curve.empty()) throw UsageError((r.dir / "curve.csv").string() + " has no rows");
    }
    return runs;
}

/// Linear interpolation; zero past the last grid point, since no sample is
/// certified beyond it.
double curve_at(const std::vector<CurvePoint>& c, double r) {
    if (r <= c.front().radius) return c.front().accuracy;
    for (std::size_t i = 1; i < c.size(); ++i) {
        if (r <= c[i].radius) {
            const double t = (r - c[i - 1].radius) / (c[i].radius - c[i - 1].radius);
            return c[i - 1].accuracy + t * (c[i].accuracy - c[i - 1].accuracy);
        }
    }
    return r == c.back().radius ? c.back().accuracy : 0.0;
}

int run_report(const ReportArgs& a, const CLI::App* sub) {
    std::vector<Run> runs = discover_runs(a.runs);
    std::vector<std::string> notes;

    bool same = true;
    for (const auto& r : runs) {
        if (r.curve.size() != runs[0].curve.size()) same = false;
        for (std::size_t i = 0; same && i < r.curve.size(); ++i)
            if (r.curve[i].radius != runs[0].curve[i].radius) same = false;
    }
    std::vector<double> grid;
    if (same) {
        for (const auto& p : runs[0].curve) grid.push_back(p.radius);
    } else {
        for (const auto& r : runs)
            for (const auto& p : r.curve) grid.push_back(p.radius);
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        notes.push_back("radius grids differ between runs; curves were linearly interpolated onto the union of "
                        "their grids (zero beyond a run's last radius)");
        std::cerr << "note: " << notes.back() << '\n';
    }

    const fs::path out = a.out;
    fs::create_directories(out);
    write_resolved(sub, out);

    std::vector<PlotSeries> series;
    for (const auto& r : runs) {
        PlotSeries s{r.name, {}};
        for (double g : grid) s.points.push_back({g, curve_at(r.curve, g)});
        series.push_back(std::move(s));
    }
    PlotOptions opt;
    opt.title = "Certified accuracy by run";
    emit_plot(series, out / "comparison.svg", opt);
    {
        auto csv = io_detail::open_out(out / "comparison.csv");
        csv << "radius";
        for (const auto& r : runs) csv << ',' << r.name;
        csv << '\n';
        for (std::size_t i = 0; i < grid.size(); ++i) {
            csv << format_double(grid[i]);
            for (const auto& s : series) csv << ',' << format_double(s.points[i].accuracy);
            csv << '\n';
        }
    }

    // spectral trends: per-epoch rows from training logs, else the final checkpoint
    auto trends = io_detail::open_out(out / "spectral_trends.csv");
    trends << "run," << kSpectralEpochHeader << '\n';
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& r : runs) {
        nlohmann::json entry = {{"run", r.name}, {"dir", r.dir.string()}};
        if (fs::exists(r.dir / "spectral_epochs.csv")) {
            for (const auto& row : read_numeric_csv(r.dir / "spectral_epochs.csv", kSpectralEpochHeader)) {
                trends << r.name << ',' << static_cast<std::size_t>(row.at(0));
                for (std::size_t c = 1; c < row.size(); ++c) trends << ',' << format_double(row[c]);
                trends << '\n';
            }
        } else if (fs::exists(r.dir / "model.smc")) {
            const MlpModel m = load_checkpoint(r.dir / "model.smc").model;
            const SpectralReport s = spectral_report(m);
            trends << r.name << ",final," << format_double(s.collapsed_spectral) << ','
                   << format_double(s.product_spectral) << ',' << format_double(s.mean_offdiag_abs_cosine()) << ','
                   << format_double(l11_norm(s.cosine_matrix)) << '\n';
        } else {
            notes.push_back(r.name + ": no training log or checkpoint, omitted from spectral_trends.csv");
        }
        if (fs::exists(r.dir / "sigma.json")) {
            std::ifstream in(r.dir / "sigma.json");
            entry["sigma"] = nlohmann::json::parse(in);
        }
        entry["certified_accuracy_at_0"] = r.curve.front().accuracy;
        summary.push_back(entry);
    }
    write_json(out / "report.json", {{"runs", summary}, {"radius_grid", grid}, {"notes", notes}});
    std::cout << "merged " << runs.size() << " run(s) into " << (out / "comparison.svg").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"smoothcert: spectrally regularized smooth training and randomized-smoothing certification"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "smoothcert 0.1.0");
    app.footer("Every subcommand accepts --config FILE (key=value per line, keys are long flag names).\n"
               "Exit codes: 0 success, 1 computational failure, 2 usage error.");

    auto add_seed = [](CLI::App* s, std::uint64_t& seed) {
        s->add_option("--seed", seed, "random seed")->capture_default_str()->envname("SMOOTHCERT_SEED");
    };
    auto add_config_help = [](CLI::App* s) {
        // handled before parsing; declared so that it shows up in --help
        s->add_option("--config", "key=value settings file; command-line flags take precedence");
    };

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a ReLU MLP with input noise and the correlation regularizer");
    ta.data.add(train);
    train->add_option("--out", ta.out, "output directory")->capture_default_str();
    train->add_option("--hidden", ta.hidden, "hidden layer widths, comma separated")->capture_default_str();
    train->add_option("--epochs", ta.epochs, "training epochs")->capture_default_str()->check(CLI::PositiveNumber);
    train->add_option("--batch-size", ta.batch_size, "minibatch size")->capture_default_str()->check(CLI::PositiveNumber);
    train->add_option("--lr", ta.lr, "initial learning rate")->capture_default_str();
    train->add_option("--lr-drops", ta.lr_drops, "E:D pairs; the rate is divided by D once E epochs are done")
        ->capture_default_str();
    train->add_option("--momentum", ta.momentum, "SGD momentum")->capture_default_str();
    train->add_option("--weight-decay", ta.weight_decay, "L2 weight decay")->capture_default_str();
    train->add_option("--alpha", ta.alpha, "regularizer weight (0 = baseline)")->capture_default_str();
    train->add_option("--sigma2", ta.sigma2, "input noise variance during training")->capture_default_str();
    add_seed(train, ta.seed);
    add_config_help(train);

    SigmaArgs sa;
    auto* sigma = app.add_subcommand("sigma", "select the certification noise level by weight-perturbation sharpness");
    sa.data.add(sigma);
    sigma->add_option("--checkpoint", sa.checkpoint, "trained model")->required();
    sigma->add_option("--out", sa.out, "output directory")->capture_default_str();
    sigma->add_option("--grid-min", sa.grid_min, "smallest candidate variance")->capture_default_str();
    sigma->add_option("--grid-max", sa.grid_max, "largest candidate variance")->capture_default_str();
    sigma->add_option("--grid-step", sa.grid_step, "candidate spacing")->capture_default_str();
    sigma->add_option("--samples", sa.samples, "perturbed copies per candidate")->capture_default_str();
    sigma->add_option("--tolerance", sa.tolerance, "largest accepted mean accuracy drop")->capture_default_str();
    sigma->add_option("--eval-subset", sa.eval_subset, "leading samples scored (0 = all)")->capture_default_str();
    sigma->add_flag("--full-scan", sa.full_scan, "score every candidate instead of stopping at the first rejection")
        ->capture_default_str();
    sigma->add_option("--workers", sa.workers, "threads")->capture_default_str()->check(CLI::PositiveNumber);
    add_seed(sigma, sa.seed);
    add_config_help(sigma);

    CertifyArgs ca;
    auto* cert = app.add_subcommand("certify", "certify samples with the smoothed majority vote");
    ca.data.add(cert);
    cert->add_option("--checkpoint", ca.checkpoint, "trained model")->required();
    cert->add_option("--out", ca.out, "output directory")->capture_default_str();
    cert->add_option("--sigma2", ca.sigma2, "noise variance for weights and inputs")->capture_default_str();
    cert->add_option("--sigma-json", ca.sigma_json, "read sigma2 from a `sigma` result when --sigma2 is 0");
    cert->add_option("--n0", ca.n0, "selection votes")->capture_default_str()->check(CLI::PositiveNumber);
    cert->add_option("--n", ca.n, "estimation votes")->capture_default_str()->check(CLI::PositiveNumber);
    cert->add_option("--alpha-b", ca.alpha_b, "failure probability of the confidence bound")->capture_default_str();
    cert->add_option("--subsample", ca.subsample, "certify a seeded random subset of this size (0 = all)")
        ->capture_default_str();
    cert->add_option("--workers", ca.workers, "threads")->capture_default_str()->check(CLI::PositiveNumber);
    cert->add_option("--sampler", ca.sampler, "weight noise sampler")->capture_default_str()->check(CLI::IsMember(kSamplers));
    cert->add_option("--cache-size", ca.cache_size, "perturbed copies for --sampler cached")->capture_default_str();
    cert->add_option("--radius-step", ca.radius_step, "spacing of the certified-accuracy curve")->capture_default_str();
    cert->add_option("--max-radius", ca.max_radius, "curve end (0 = largest certified radius)")->capture_default_str();
    add_seed(cert, ca.seed);
    add_config_help(cert);

    BoundArgs ba;
    auto* bound = app.add_subcommand("bound", "evaluate the margin generalization bound and certified-radius terms");
    ba.data.add(bound);
    bound->add_option("--checkpoint", ba.checkpoint, "trained model")->required();
    bound->add_option("--out", ba.out, "output directory")->capture_default_str();
    bound->add_option("--gamma", ba.gamma, "margin")->capture_default_str();
    bound->add_option("--delta", ba.delta, "confidence parameter")->capture_default_str();
    bound->add_option("--sigma2", ba.sigma2, "input/weight noise variance for the empirical margin loss")
        ->capture_default_str();
    bound->add_option("--margin-votes", ba.margin_votes, "votes per sample for the empirical margin loss (0 = skip)")
        ->capture_default_str();
    bound->add_option("--pa", ba.pa, "top-class probability for the radius term");
    bound->add_option("--pb", ba.pb, "runner-up probability for the radius term");
    add_seed(bound, ba.seed);
    add_config_help(bound);

    ReportArgs ra;
    auto* report = app.add_subcommand("report", "merge result directories into one comparison");
    report->add_option("runs", ra.runs, "result directories, or parents of them")->required();
    report->add_option("--out", ra.out, "output directory")->capture_default_str();
    add_config_help(report);

    std::vector<std::string> args;
    try {
        args = expand_config(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*train) return run_train(ta, train);
        if (*sigma) return run_sigma(sa, sigma);
        if (*cert) return run_certify(ca, cert);
        if (*bound) return run_bound(ba, bound);
        if (*report) return run_report(ra, report);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
