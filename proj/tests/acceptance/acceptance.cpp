// Copyright 2026 The smoothcert Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Pass criterion numbers as arguments to run a
// subset, e.g. `acceptance 1 2 9`.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "hp_formulas.hpp"
#include "smoothcert/oracle.hpp"
#include "smoothcert/smoothcert.hpp"
#include "test_util.hpp"

using namespace smoothcert;
namespace fs = std::filesystem;
namespace hp = smoothcert::fixtures::hp;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects failed checks of one criterion with a short reason each.
struct Verdict {
    std::vector<std::string> failures;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

double rel(double ours, const hp::Real& ref) {
    const double r = static_cast<double>(ref);
    if (r == 0.0) return std::abs(ours);
    return std::abs(ours - r) / std::abs(r);
}

const fs::path kData = SMOOTHCERT_TEST_DATA_DIR;

Dataset mnist() {
    static const Dataset ds = load_idx(kData / "mnist10k/images-idx3-ubyte", kData / "mnist10k/labels-idx1-ubyte");
    return ds;
}

// ---------------------------------------------------------------- 1

void formula_fidelity(Verdict& v) {
    std::mt19937_64 eng(20260101);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng); };
    auto pick = [&](unsigned a, unsigned b) { return std::uniform_int_distribution<unsigned>(a, b)(eng); };
    std::map<std::string, double> worst;
    double lib_seconds = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        BoundInputs in;
        in.gamma = std::exp(uni(std::log(0.01), std::log(10.0)));
        in.delta = uni(0.001, 0.2);
        in.m = pick(100, 100000);
        in.B = uni(0.5, 40.0);
        in.n = pick(1, 6);
        in.h = pick(4, 1024);
        in.d = pick(1, 4000);
        for (std::size_t i = 0; i < in.n; ++i) {
            const double s = uni(0.2, 8.0);
            in.per_layer_spectral.push_back(s);
            in.per_layer_frobenius.push_back(s * uni(1.0, 20.0));
        }
        const double loss = uni(0.0, 0.5);
        const double pa = uni(0.5, 1.0);
        const double pb = uni(0.0, 1.0 - pa);
        const double sigma = uni(0.01, 3.0);

        const auto t0 = Clock::now();
        const double tau = tau_solve(static_cast<double>(in.d));
        const double ps = psi(in, tau);
        const double ph = phi(in, ps);
        const double kl = kl_term(in.per_layer_frobenius, ps);
        const double bd = generalization_bound(loss, kl, in.m, in.delta);
        const double rad = radius_formula(pa, pb, sigma);
        const double ex = eps_x(pa, pb, ps);
        lib_seconds += seconds_since(t0);

        hp::Inputs h{in.gamma, in.delta, in.B, static_cast<unsigned>(in.m), static_cast<unsigned>(in.n),
                     static_cast<unsigned>(in.h), static_cast<unsigned>(in.d), {}, {}};
        for (std::size_t i = 0; i < in.n; ++i) {
            h.spectral.emplace_back(in.per_layer_spectral[i]);
            h.frobenius.emplace_back(in.per_layer_frobenius[i]);
        }
        const hp::Real t = hp::tau(static_cast<unsigned>(in.d));
        const hp::Real p = hp::psi(h, t);
        const hp::Real k = hp::kl(h.frobenius, p);
        const std::map<std::string, double> errs = {
            {"tau", rel(tau, t)},
            {"psi", rel(ps, p)},
            {"phi", rel(ph, hp::phi(h, p))},
            {"kl", rel(kl, k)},
            {"bound", rel(bd, hp::bound(loss, k, h.m, h.delta))},
            {"radius", rel(rad, hp::radius(pa, pb, sigma))},
            {"eps_x", rel(ex, hp::eps_x(pa, pb, p))},
        };
        for (const auto& [name, e] : errs) worst[name] = std::max(worst[name], e);
    }
    std::string summary;
    for (const auto& [name, e] : worst) {
        v.check(e <= 1e-12, name + " relative error " + fmt(e));
        summary += name + " " + fmt(e, 2) + "  ";
    }
    v.check(lib_seconds < 1.0, "library time " + fmt(lib_seconds) + " s");
    v.note("worst relative errors: " + summary);
    v.note("library time for 100 inputs " + fmt(lib_seconds, 3) + " s");
}

// ---------------------------------------------------------------- 2

void closed_form_goldens(Verdict& v) {
    for (std::uint64_t n : {10ull, 100ull, 100000ull}) {
        const double got = lower_conf_bound(n, n, 0.999);
        const double want = std::pow(0.001, 1.0 / static_cast<double>(n));
        v.check(std::abs(got - want) <= 1e-10, "lower_conf_bound(" + std::to_string(n) + ") off by " + fmt(got - want));
    }
    const double t2 = tau_solve(2.0), want = -2.0 * std::log(1.0 - std::sqrt(2.0) / 2.0);
    v.check(std::abs(t2 - want) <= 1e-10, "tau(2) off by " + fmt(t2 - want));
    double worst = 0.0;
    for (double x = 0.0; x <= 60.0; x += 0.05) {
        const double want_cdf = -std::expm1(-x / 2.0);
        worst = std::max(worst, std::abs(chi2_cdf(x, 2.0) - want_cdf));
    }
    v.check(worst <= 1e-12, "chi2_cdf(d=2) off by " + fmt(worst));
    v.note("tau(2) = " + fmt(t2, 17) + ", worst chi2 error " + fmt(worst, 2));
}

// ---------------------------------------------------------------- 3

void correlation_identity(Verdict& v) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const MlpModel m = fixtures::random_model({13, 24, 16, 6}, 300 + s, true);
        const Vector x = fixtures::random_vector(12, 400 + s, 1.0);
        const Matrix mc = oracle::mc_correlation(m, x, 1000000, 1.0, 500 + s);
        const Matrix an = correlation_matrix(m);
        for (std::size_t i = 0; i < an.rows(); ++i)
            for (std::size_t j = 0; j < an.cols(); ++j) worst = std::max(worst, std::abs(mc(i, j) - an(i, j)));
    }
    const double secs = seconds_since(t0);
    v.check(worst <= 0.01, "largest entry gap " + fmt(worst));
    v.check(secs < 30.0, "took " + fmt(secs) + " s");
    v.note("largest entry gap " + fmt(worst, 3) + " over 5 models, " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------- 4 and 5

TrainConfig mnist_recipe(double alpha, std::size_t epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.alpha = alpha;
    cfg.seed = 1;
    return cfg;
}

const std::vector<std::size_t> kMnistArch = {784, 32, 32, 32, 10};

void spectral_trend(Verdict& v) {
    const auto t0 = Clock::now();
    const Dataset ds = mnist();
    std::vector<SpectralReport> reps;
    std::vector<double> accs;
    for (double alpha : {0.0, 0.1, 0.3}) {
        const auto res = train(MlpModel::init(kMnistArch, 1), ds, mnist_recipe(alpha, 10));
        reps.push_back(spectral_report(res.model));
        accs.push_back(res.metrics.back().train_acc);
        v.note("alpha " + fmt(alpha) + ": collapsed " + fmt(reps.back().collapsed_spectral) + ", product " +
               fmt(reps.back().product_spectral) + ", mean |cos| " + fmt(reps.back().mean_offdiag_abs_cosine()) +
               ", train acc " + fmt(accs.back(), 4));
    }
    for (std::size_t i = 1; i < reps.size(); ++i) {
        v.check(reps[i].collapsed_spectral < reps[i - 1].collapsed_spectral, "collapsed norm not decreasing at run " + std::to_string(i));
        v.check(reps[i].product_spectral < reps[i - 1].product_spectral, "product norm not decreasing at run " + std::to_string(i));
        v.check(reps[i].mean_offdiag_abs_cosine() < reps[i - 1].mean_offdiag_abs_cosine(),
                "mean |cos| not decreasing at run " + std::to_string(i));
    }
    const double secs = seconds_since(t0);
    v.check(secs < 600.0, "took " + fmt(secs) + " s");
    v.note(fmt(secs, 3) + " s");
}

void regularizer_overhead(Verdict& v) {
    const Dataset ds = mnist();
    Trainer base(MlpModel::init(kMnistArch, 2), ds, mnist_recipe(0.0, 12));
    Trainer reg(MlpModel::init(kMnistArch, 2), ds, mnist_recipe(0.1, 12));
    // alternate the two runs (ABBA) so that slow drifts hit both equally
    std::vector<double> tb, tr;
    for (int i = 0; i < 6; ++i) {
        if (i % 2 == 0) {
            tb.push_back(base.run_epoch().seconds);
            tr.push_back(reg.run_epoch().seconds);
        } else {
            tr.push_back(reg.run_epoch().seconds);
            tb.push_back(base.run_epoch().seconds);
        }
    }
    auto mean = [](const std::vector<double>& x) {
        double s = 0;
        for (double t : x) s += t;
        return s / static_cast<double>(x.size());
    };
    const double mb = mean(tb), mr = mean(tr), overhead = mr / mb - 1.0;
    v.check(overhead < 0.05, "overhead " + fmt(100 * overhead) + "%");
    v.note("mean epoch " + fmt(mb, 4) + " s baseline vs " + fmt(mr, 4) + " s regularized over " +
           std::to_string(tb.size()) + " epochs each: " + fmt(100 * overhead, 3) + "%");
}

// ---------------------------------------------------------------- 6 and 9

struct CurveRun {
    MlpModel model;
    SigmaSelection sigma;
    std::vector<CertifiedSample> samples;
};

std::map<double, CurveRun>& curve_runs() {
    static std::map<double, CurveRun> runs;
    return runs;
}

const CurveRun& curve_run(double alpha, Verdict& v) {
    auto& runs = curve_runs();
    if (auto it = runs.find(alpha); it != runs.end()) return it->second;
    const Dataset all = mnist();
    const Dataset train_set = all.slice(0, 9000), test_set = all.slice(9000, 1000);
    CurveRun r;
    r.model = train(MlpModel::init(kMnistArch, 3), train_set, mnist_recipe(alpha, 10)).model;
    r.sigma = select_sigma(r.model, train_set, SigmaSearchConfig{}, 4);
    std::vector<std::size_t> idx(test_set.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    r.samples = certify_dataset(r.model, test_set, idx, NoiseConfig::isotropic(std::sqrt(r.sigma.sigma2), 5), 100, 10000,
                                0.001);
    std::size_t cert = 0, ok = 0;
    for (const auto& s : r.samples) {
        cert += !s.result.abstain();
        ok += s.correct();
    }
    v.note("alpha " + fmt(alpha) + ": test acc " + fmt(plain_accuracy(r.model, test_set), 4) + ", sigma2 " +
           fmt(r.sigma.sigma2) + (r.sigma.flagged ? " (flagged)" : "") + ", certified " + std::to_string(cert) +
           ", certified correct " + std::to_string(ok));
    return runs.emplace(alpha, std::move(r)).first->second;
}

void certified_curve_trend(Verdict& v) {
    const auto t0 = Clock::now();
    const CurveRun& base = curve_run(0.0, v);
    const CurveRun& reg = curve_run(0.1, v);
    double top = 0.0;
    for (const auto* r : {&base, &reg})
        for (const auto& s : r->samples) top = std::max(top, s.result.radius);
    const auto grid = radius_grid(top, top / 100.0);
    const auto cb = certified_accuracy_curve(base.samples, grid);
    const auto cr = certified_accuracy_curve(reg.samples, grid);
    std::size_t active = 0, dominated = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (cb[i].accuracy == 0.0 && cr[i].accuracy == 0.0) continue;
        ++active;
        if (cr[i].accuracy >= cb[i].accuracy) ++dominated;
    }
    const double share = active ? static_cast<double>(dominated) / static_cast<double>(active) : 0.0;
    const double secs = seconds_since(t0);
    v.check(active > 0, "no nonzero grid points");
    v.check(share >= 0.6, "regularized curve on top at only " + fmt(100 * share) + "% of the grid");
    v.check(secs < 1800.0, "took " + fmt(secs) + " s");
    v.note("regularized >= baseline at " + std::to_string(dominated) + "/" + std::to_string(active) +
           " nonzero grid points (" + fmt(100 * share, 3) + "%), accuracy at r=0: " + fmt(cb[0].accuracy, 3) +
           " vs " + fmt(cr[0].accuracy, 3) + ", " + fmt(secs, 4) + " s");
}

int run_cli(const std::string& args) {
    const int status = std::system((SMOOTHCERT_CLI_PATH " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void certify_determinism(Verdict& v) {
    const fs::path dir = fs::temp_directory_path() / "smoothcert_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const MlpModel model = train(MlpModel::init(kMnistArch, 6), mnist().slice(0, 2000), mnist_recipe(0.1, 2)).model;
    save_checkpoint(dir / "model.smc", model);
    const std::string common = "certify --images " + (kData / "mnist10k/images-idx3-ubyte").string() + " --labels " +
                               (kData / "mnist10k/labels-idx1-ubyte").string() + " --checkpoint " +
                               (dir / "model.smc").string() +
                               " --offset 9000 --subsample 40 --sigma2 0.02 --n 2000 --seed 11";
    const int a = run_cli(common + " --out " + (dir / "a").string());
    const int b = run_cli(common + " --out " + (dir / "b").string());
    const int c = run_cli(common + " --workers 2 --out " + (dir / "c").string());
    v.check(a == 0 && b == 0 && c == 0, "certify exit codes " + std::to_string(a) + "," + std::to_string(b) + "," +
                                            std::to_string(c));
    for (const char* f : {"certify.csv", "curve.csv"}) {
        const std::string sa = slurp(dir / "a" / f);
        v.check(!sa.empty(), std::string(f) + " missing");
        v.check(sa == slurp(dir / "b" / f), std::string(f) + " differs between identical runs");
        v.check(sa == slurp(dir / "c" / f), std::string(f) + " differs with 2 workers");
    }
    v.note("3 runs (1, 1, 2 workers) of 40 samples compared byte for byte");
    fs::remove_all(dir);
}

// ---------------------------------------------------------------- 7

void certification_soundness(Verdict& v) {
    const auto t0 = Clock::now();
    const Dataset ds = synth_blobs(3, 2, 600, 0.06, 17);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    cfg.lr_drops = {{20, 10.0}};
    cfg.alpha = 0.1;
    cfg.noise_variance = 0.01;
    cfg.seed = 7;
    const MlpModel m = train(MlpModel::init({2, 16, 16, 3}, 7), ds, cfg).model;
    const double sigma = 0.08;
    const NoiseConfig noise = NoiseConfig::isotropic(sigma, 9);
    const std::uint64_t kVotes = 1000000, kProbeVotes = 20000;
    const std::size_t kDensity = 21;

    std::size_t attacked = 0, flips = 0;
    double min_share = 1.0;
    for (std::size_t i = 0; i < ds.size() && attacked < 10; i += 37) {
        const CertifyResult c = certify(m, ds.input(i), noise, 100, kVotes, 0.001, i);
        if (c.abstain()) continue;
        const auto rep = oracle::grid_attack(m, ds.input(i), *c.predicted, c.radius, noise, kDensity, kProbeVotes,
                                             derive_seed(99, i, Phase::probe), 0.95, 1, i);
        flips += rep.flips;
        min_share = std::min(min_share, rep.worst_vote_share);
        ++attacked;
    }
    v.check(attacked == 10, "only " + std::to_string(attacked) + " certified samples");
    v.check(flips == 0, std::to_string(flips) + " flips within 0.95 R");
    v.note(std::to_string(attacked) + " samples, " + std::to_string(flips) + " flips, lowest reference vote share " +
           fmt(min_share, 4));

    // walk from one class centre toward another until the vote share drops to about 0.8
    Vector a(ds.input(0).begin(), ds.input(0).end()), b(ds.input(1).begin(), ds.input(1).end());
    const std::size_t ref = ds.labels[0];
    double lo = 0.0, hi = 1.0;
    auto at = [&](double t) {
        Vector x(2);
        for (std::size_t j = 0; j < 2; ++j) x[j] = (1 - t) * a[j] + t * b[j];
        return x;
    };
    for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo + hi);
        const auto vc = sample_under_noise(m, at(mid), 20000, noise, derive_seed(5, it, Phase::probe));
        (static_cast<double>(vc.counts[ref]) / 20000.0 > 0.8 ? lo : hi) = mid;
    }
    const Vector x = at(lo);
    const CertifyResult c = certify(m, x, noise, 100, kVotes, 0.001, 12345);
    v.check(!c.abstain() && *c.predicted == ref, "near-boundary sample not certified");
    if (!c.abstain()) {
        const auto rep = oracle::grid_attack(m, x, *c.predicted, c.radius, noise, kDensity, kProbeVotes, 4242, 2.0);
        v.check(rep.flips > 0, "no flip within 2 R of the near-boundary sample");
        v.note("near-boundary sample: p_A lower " + fmt(c.pa_lower, 4) + ", R " + fmt(c.radius, 4) + ", " +
               std::to_string(rep.flips) + "/" + std::to_string(rep.probes) + " probes flip within 2 R");
    }
    const double secs = seconds_since(t0);
    v.check(secs < 600.0, "took " + fmt(secs) + " s");
    v.note(fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------- 8

void invariant_suites(Verdict& v) {
    std::mt19937_64 eng(8);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng); };

    // Gershgorin bound dominates the squared spectral norm
    for (std::uint64_t s = 0; s < 50; ++s) {
        const Matrix w = fixtures::random_matrix(2 + s % 7, 3 + s % 5, s);
        const double sn = spectral_norm(w);
        v.check(gershgorin_bound(w) >= sn * sn * (1 - 1e-12), "Gershgorin below spectral^2 for seed " + std::to_string(s));
    }

    // Psi falls and Phi rises with any layer's spectral norm; Psi rises with gamma
    for (double g : {0.1, 1.0, 10.0}) {
        BoundInputs in{g, 0.05, 1000, 10.0, 3, 32, 785, {1.0, 1.0, 1.0}, {3.0, 3.0, 3.0}};
        const double tau = tau_solve(785);
        double prev_psi = psi(in, tau), prev_phi = phi(in, prev_psi);
        for (double s : {1.5, 2.0, 4.0, 8.0}) {
            in.per_layer_spectral[1] = s;
            in.per_layer_frobenius[1] = 3.0 * s;
            const double p = psi(in, tau), f = phi(in, p);
            v.check(p < prev_psi && f > prev_phi, "Psi/Phi not monotone at gamma " + fmt(g) + ", norm " + fmt(s));
            prev_psi = p;
            prev_phi = f;
        }
        BoundInputs bigger = in;
        bigger.gamma = 2 * g;
        v.check(psi(bigger, tau) > psi(in, tau), "Psi not increasing in gamma");
    }

    // margin loss is non-decreasing in gamma on shared draws
    {
        const MlpModel m = fixtures::random_model({3, 12, 3}, 5, true);
        const Dataset ds = synth_blobs(3, 2, 60, 0.2, 3);
        double prev = -1.0;
        for (double g : {0.0, 0.05, 0.2, 0.5, 1.0, 3.0}) {
            const double l = empirical_margin_loss(m, ds, g, 200, NoiseConfig::isotropic(0.2, 1), 4);
            v.check(l >= prev, "margin loss fell at gamma " + fmt(g));
            prev = l;
        }
    }

    // certified-accuracy curves never increase; votes add up
    {
        const MlpModel m = fixtures::random_model({5, 10, 3}, 6, true);
        const Dataset ds = synth_blobs(3, 4, 30, 0.2, 4);
        std::vector<std::size_t> idx(ds.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const auto cs = certify_dataset(m, ds, idx, NoiseConfig::isotropic(0.3, 2), 50, 2000, 0.001);
        const auto curve = certified_accuracy_curve(cs, radius_grid(1.0, 0.01));
        for (std::size_t i = 1; i < curve.size(); ++i)
            v.check(curve[i].accuracy <= curve[i - 1].accuracy, "certified accuracy curve increases");
        for (auto mode : {WeightNoiseMode::reparameterized, WeightNoiseMode::explicit_weights}) {
            NoiseConfig nc = NoiseConfig::isotropic(0.3, 2);
            nc.mode = mode;
            const auto vc = sample_under_noise(m, ds.input(0), 777, nc, 3);
            std::uint64_t total = 0;
            for (auto c : vc.counts) total += c;
            v.check(total == 777 && vc.total == 777, "vote counts do not add up");
        }
    }

    // correlation matrix ignores a positive rescaling of any layer
    for (std::uint64_t s = 0; s < 10; ++s) {
        MlpModel m = fixtures::random_model({6, 8, 8, 4}, 50 + s);
        const Matrix before = correlation_matrix(m);
        m.layer(s % 3) *= uni(0.1, 10.0);
        const Matrix after = correlation_matrix(m);
        double gap = 0.0;
        for (std::size_t i = 0; i < before.data().size(); ++i)
            gap = std::max(gap, std::abs(before.data()[i] - after.data()[i]));
        v.check(gap < 1e-12, "correlation matrix changed under layer rescaling by " + fmt(gap));
    }

    // checkpoint and IDX round trips
    {
        const fs::path dir = fs::temp_directory_path() / "smoothcert_acceptance_roundtrip";
        fs::create_directories(dir);
        const MlpModel m = MlpModel::init({7, 5, 4}, 3);
        save_checkpoint(dir / "m.smc", m, {{"k", 1}});
        v.check(load_checkpoint(dir / "m.smc").model == m, "checkpoint round trip changed weights");
        Dataset ds;
        ds.num_classes = 10;
        ds.inputs = Matrix(5, 6);
        for (std::size_t i = 0; i < 30; ++i) ds.inputs.data()[i] = static_cast<double>((i * 53) % 256) / 255.0;
        ds.labels = {1, 0, 9, 3, 3};
        write_idx(ds, 2, 3, dir / "i", dir / "l");
        const Dataset back = load_idx(dir / "i", dir / "l");
        v.check(back.inputs.data() == ds.inputs.data() && back.labels == ds.labels, "IDX round trip changed data");
        fs::remove_all(dir);
    }

    // finite-difference gradients: regularizer < 1e-4, network < 1e-6
    {
        const MlpModel m = fixtures::random_model({5, 7, 6, 4}, 21);
        const auto rg = regularizer_and_gradient(m);
        const Vector x = fixtures::random_vector(5, 22);
        ForwardCache cache;
        const Vector logits = forward(m, x, &cache);
        const auto lg = cross_entropy_loss(logits, 2);
        const Gradients ng = backward(m, cache, lg.grad);
        double worst_reg = 0.0, worst_net = 0.0;
        for (std::size_t l = 0; l < m.num_layers(); ++l) {
            for (std::size_t j = 0; j < m.layer(l).data().size(); j += 3) {
                MlpModel p = m, q = m;
                const double h = 1e-6;
                p.layer(l).data()[j] += h;
                q.layer(l).data()[j] -= h;
                const double fd_reg =
                    (regularizer_and_gradient(p).value - regularizer_and_gradient(q).value) / (2 * h);
                const double fd_net = (cross_entropy_loss(forward(p, x), 2).loss -
                                       cross_entropy_loss(forward(q, x), 2).loss) /
                                      (2 * h);
                const double gr = rg.grads[l].data()[j], gn = ng[l].data()[j];
                worst_reg = std::max(worst_reg, std::abs(fd_reg - gr) / std::max(1e-3, std::abs(gr)));
                worst_net = std::max(worst_net, std::abs(fd_net - gn) / std::max(1e-3, std::abs(gn)));
            }
        }
        v.check(worst_reg < 1e-4, "regularizer gradient relative error " + fmt(worst_reg));
        v.check(worst_net < 1e-6, "network gradient relative error " + fmt(worst_net));
        v.note("finite-difference relative errors: regularizer " + fmt(worst_reg, 2) + ", network " +
               fmt(worst_net, 2));
    }
}

struct Criterion {
    int id;
    const char* title;
    std::function<void(Verdict&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "formula fidelity against 50-digit recomputation", formula_fidelity},
        {2, "closed-form goldens", closed_form_goldens},
        {3, "Monte-Carlo output correlation matches the cosine matrix", correlation_identity},
        {4, "spectral norms and |cos| fall as the regularizer weight grows", spectral_trend},
        {5, "regularizer epoch overhead below 5%", regularizer_overhead},
        {6, "regularized certified-accuracy curve dominates the baseline", certified_curve_trend},
        {7, "certified radii survive a grid attack", certification_soundness},
        {8, "invariant suites", invariant_suites},
        {9, "certify CSVs are byte-identical across re-runs", certify_determinism},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        Verdict v;
        const auto t0 = Clock::now();
        try {
            c.run(v);
        } catch (const std::exception& e) {
            v.failures.push_back(std::string("exception: ") + e.what());
        }
        const bool ok = v.failures.empty();
        failed += !ok;
        std::cout << (ok ? "PASS" : "FAIL") << " [" << c.id << "] " << c.title << " (" << fmt(seconds_since(t0), 3)
                  << " s)\n";
        for (const auto& n : v.notes) std::cout << "       " << n << '\n';
        for (const auto& f : v.failures) std::cout << "       failed: " << f << '\n';
        std::cout.flush();
    }
    return failed == 0 ? 0 : 1;
}
