// Command-line front end: synthetic data generation, single-point
// analysis, the depth x width sweep with SVG heat maps, structural
// bounds, the random-matrix experiments, and the identity check suite.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include "lossmin/bounds.hpp"
#include "lossmin/minima.hpp"
#include "lossmin/params_io.hpp"
#include "lossmin/random_lab.hpp"
#include "lossmin/sweep.hpp"
#include "lossmin/synthetic.hpp"
#include "lossmin/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace lossmin;
using nlohmann::json;

namespace {

CutoffCriterion parse_cutoff(const std::string& s) {
    if (s == "press") return CutoffCriterion::PressEtAl;
    if (s == "golub") return CutoffCriterion::GolubVanLoan;
    if (s == "lapack") return CutoffCriterion::Lapack;
    throw DataError("unknown cutoff criterion: " + s);
}

std::vector<Eigen::Index> parse_index_list(const std::string& s) {
    std::vector<Eigen::Index> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(static_cast<Eigen::Index>(std::stoll(tok)));
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << text;
}

json load_json_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    json j;
    in >> j;
    return j;
}

TrainConfig train_config_from_json(const json& j, std::uint64_t seed) {
    TrainConfig tc;
    tc.learning_rate = j.value("learning_rate", 0.01);
    tc.momentum = j.value("momentum", 0.9);
    tc.batch_size = j.value("batch_size", Eigen::Index{200});
    tc.epochs = j.value("epochs", Eigen::Index{40});
    tc.seed = j.value("seed", seed);
    tc.validate();
    return tc;
}

int run_gen_data(const fs::path& out_dir, const SyntheticConfig& cfg) {
    const SyntheticData data = gen_synthetic(cfg);
    fs::create_directories(out_dir);
    write_csv(data.X, (out_dir / "X.csv").string());
    write_csv(data.Y, (out_dir / "Y.csv").string());
    json manifest;
    manifest["samples"] = cfg.samples;
    manifest["input_dim"] = cfg.input_dim;
    manifest["output_dim"] = cfg.output_dim;
    manifest["hidden_layers"] = cfg.hidden_layers;
    manifest["hidden_width"] = cfg.hidden_width;
    manifest["weight_scale"] = cfg.weight_scale;
    manifest["seed"] = cfg.seed;
    manifest["ground_truth_activation"] = "tanh";
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << (out_dir / "X.csv").string() << " and Y.csv\n";
    return 0;
}

int run_lemma_check(std::uint64_t seed, CutoffCriterion cutoff) {
    bool all_ok = true;
    auto report = [&all_ok](const std::string& name, bool ok, double err) {
        all_ok = all_ok && ok;
        std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  (max err " << err << ")\n";
    };

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto rand_mat = [&](Eigen::Index r, Eigen::Index c) {
        DenseMatrix m(r, c);
        for (Eigen::Index j = 0; j < c; ++j)
            for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
        return m;
    };

    // Output decomposition identity: vec(Yhat) = D^(l) vec(W^(l)) per layer.
    {
        const NetworkArch arch(3, 2, {4, 3}, ActivationKind::relu());
        const NetworkParams p = init_params(arch, seed + 1, 1.0);
        const DenseMatrix X = rand_mat(12, 3);
        const ForwardTrace t = forward(p, X);
        const ActivationTensor pat = activation_patterns(t, p);
        const DBlocks d = assemble_D(t, pat, p);
        const Vector yhat = vectorize(t.output());
        double err = 0.0;
        for (Eigen::Index l = 1; l <= arch.depth(); ++l) {
            Eigen::Index d_l = arch.layer_width(l);
            DenseMatrix dl(d.ambient_dim, arch.layer_width(l - 1) * d_l);
            for (Eigen::Index k = 0; k < d_l; ++k)
                dl.middleCols(k * arch.layer_width(l - 1), arch.layer_width(l - 1)) =
                    d.blocks[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(k)];
            const Vector rec = dl * vectorize(p.weights[static_cast<std::size_t>(l - 1)]);
            err = std::max(err, (rec - yhat).norm() / (1.0 + yhat.norm()));
        }
        const Vector rec_last = d.last_block * vectorize(p.weights.back());
        err = std::max(err, (rec_last - yhat).norm() / (1.0 + yhat.norm()));
        report("output-decomposition identity (per-layer vec identity)", err < 1e-8, err);
    }

    // Orthogonal-block projector additivity.
    {
        double err = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            DenseMatrix a = rand_mat(10, 3);
            auto ba = column_space_basis(a, cutoff);
            DenseMatrix b = project_null(ba, rand_mat(10, 3));
            auto bb = column_space_basis(b, cutoff);
            DenseMatrix concat(10, 6);
            concat << a, b;
            auto bc = column_space_basis(concat, cutoff);
            Vector v = rand_mat(10, 1).col(0);
            err = std::max(err,
                           (project(bc, v) - project(ba, v) - project(bb, v)).norm() / v.norm());
        }
        report("orthogonal-block projector additivity", err < 1e-9, err);
    }

    // Sequential decomposition equals the one-shot projection.
    {
        const NetworkArch arch(2, 1, {2}, ActivationKind::relu());
        const NetworkParams p = init_params(arch, seed + 2, 1.0);
        const DenseMatrix X = rand_mat(5, 2);
        const DenseMatrix Y = rand_mat(5, 1);
        const ForwardTrace t = forward(p, X);
        const ActivationTensor pat = activation_patterns(t, p);
        const DBlocks d = assemble_D(t, pat, p);
        const QDecomposition q = decompose_contributions(d, Y, std::nullopt, cutoff);
        const ProjectorBasis full = column_space_basis(d.concatenated(), cutoff);
        const double oneshot = 0.5 * project(full, vectorize(Y)).squaredNorm();
        const double err = std::abs(q.total() - oneshot);
        report("sequential block decomposition equals one-shot projection", err < 1e-9, err);
    }

    // Shallow local-minimum loss formula, end to end.
    {
        const NetworkArch arch(2, 1, {3}, ActivationKind::relu());
        const DenseMatrix X = rand_mat(8, 2);
        const DenseMatrix Y = rand_mat(8, 1);
        const NetworkParams p0 = init_params(arch, seed + 3, 1.0);
        const DescentResult d = descend_to_stationarity(p0, X, Y, 1e-10, 20000);
        const ForwardTrace t = forward(d.params, X);
        const ActivationTensor pat = activation_patterns(t, d.params);
        const double predicted = shallow_min_loss(pat.lambda[0], X, Vector(Y.col(0)), cutoff);
        const double actual = loss(t, Y);
        const bool converged = d.report.grad_norm <= 1e-10 && d.report.differentiable;
        const double err = std::abs(actual - predicted);
        if (converged)
            report("shallow local-minimum loss formula", err < 1e-6, err);
        else
            std::cout << "SKIP  shallow local-minimum loss formula (descent reached grad "
                      << d.report.grad_norm << ", differentiable=" << d.report.differentiable
                      << ")\n";
    }

    return all_ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loss landscape analysis for feedforward ReLU-family networks"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string cutoff_name = "press";
    int jobs = 1;
    std::string out_dir = ".";
    std::string config_path;
    app.add_option("--seed", seed, "base RNG seed");
    app.add_option("--cutoff", cutoff_name, "singular value cutoff: press|golub|lapack");
    app.add_option("--jobs", jobs, "parallel sweep cells");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--config", config_path, "JSON config file (training hyperparameters)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate synthetic regression data");
    SyntheticConfig syn;
    gen->add_option("--samples", syn.samples);
    gen->add_option("--dx", syn.input_dim);
    gen->add_option("--dy", syn.output_dim);
    gen->add_option("--hidden", syn.hidden_layers, "ground-truth hidden layer count");
    gen->add_option("--width", syn.hidden_width, "ground-truth hidden width");
    gen->add_option("--scale", syn.weight_scale, "ground-truth weight scale");
    bool full_scale = false;
    gen->add_flag("--full-scale", full_scale, "use the full-size generator (H=7, d=50, m=5000)");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "closed-form loss analysis at one point");
    std::string params_dir, x_path, y_path;
    analyze->add_option("--params", params_dir, "NetworkParams directory")->required();
    analyze->add_option("--x", x_path, "input matrix CSV")->required();
    analyze->add_option("--y", y_path, "target matrix CSV")->required();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "depth x width sweep with SVG heat maps");
    std::string depths_arg = "1,2,3", widths_arg = "2,4,8,16";
    std::string sweep_x, sweep_y;
    std::string sweep_activation = "relu";
    sweep->add_option("--depths", depths_arg, "comma-separated H values");
    sweep->add_option("--widths", widths_arg, "comma-separated width values");
    sweep->add_option("--x", sweep_x, "input CSV (desk synthetic data when omitted)");
    sweep->add_option("--y", sweep_y, "target CSV");
    sweep->add_option("--activation", sweep_activation, "relu|leaky_relu|abs|linear");

    // bound
    auto* bound = app.add_subcommand("bound", "structural upper bound at one point");
    std::string bound_params, bound_x, bound_y, structure = "weak", subset_arg;
    Eigen::Index bound_t = 0, bound_n = -1;
    double bound_tol = 1e-9;
    bound->add_option("--params", bound_params)->required();
    bound->add_option("--x", bound_x)->required();
    bound->add_option("--y", bound_y)->required();
    bound->add_option("--structure", structure, "weak|strong");
    bound->add_option("--t", bound_t, "structure level t");
    bound->add_option("--subset", subset_arg, "layer subset S, e.g. \"0,2,3\"");
    bound->add_option("--n", bound_n, "required units per layer (default d_y)");
    bound->add_option("--tol", bound_tol, "structure detection tolerance");

    // prop2
    auto* prop2 = app.add_subcommand("prop2", "rank/loss Monte Carlo experiments");
    std::string regime_name = "under";
    Eigen::Index p2_m = 4096, p2_dx = 4, p2_d = 4, p2_trials = 100;
    bool signed_pattern = false;
    prop2->add_option("--regime", regime_name, "under|over");
    prop2->add_option("--m", p2_m);
    prop2->add_option("--dx", p2_dx);
    prop2->add_option("--d", p2_d);
    prop2->add_option("--trials", p2_trials);
    prop2->add_flag("--signed-pattern", signed_pattern, "use {-1,1} patterns instead of {0,1}");

    // lemma-check
    auto* lemma = app.add_subcommand("lemma-check", "run the identity check suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // usage problems map to exit code 1 (0 for --help)
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const CutoffCriterion cutoff = parse_cutoff(cutoff_name);
        const fs::path out(out_dir);

        if (*gen) {
            if (full_scale) {
                syn.samples = 5000;
                syn.input_dim = 10;
                syn.hidden_layers = 7;
                syn.hidden_width = 50;
            }
            syn.seed = seed;
            return run_gen_data(out, syn);
        }

        if (*analyze) {
            const NetworkParams params = load_params(params_dir);
            const DenseMatrix X = read_csv_file(x_path);
            const DenseMatrix Y = read_csv_file(y_path);
            const MinimaReport r = compute_J(params, X, Y, cutoff);
            const std::string text = to_json(r).dump(2) + "\n";
            std::cout << text;
            fs::create_directories(out);
            write_text(out / "report.json", text);
            return 0;
        }

        if (*sweep) {
            SweepConfig cfg;
            cfg.depths = parse_index_list(depths_arg);
            cfg.widths = parse_index_list(widths_arg);
            cfg.seed = seed;
            cfg.cutoff = cutoff;
            cfg.jobs = jobs;
            cfg.activation = activation_from_string(sweep_activation);
            cfg.train = train_config_from_json(load_json_config(config_path), seed);

            DenseMatrix X, Y;
            if (sweep_x.empty()) {
                SyntheticConfig sc;
                sc.seed = seed;
                const SyntheticData data = gen_synthetic(sc);
                X = data.X;
                Y = data.Y;
            } else {
                X = read_csv_file(sweep_x);
                Y = read_csv_file(sweep_y);
            }

            const std::vector<SweepCell> cells = run_sweep(cfg, X, Y);
            fs::create_directories(out);
            write_text(out / "sweep.csv", sweep_csv(cells));
            write_text(out / "heatmap_init.svg",
                       sweep_svg(cells, cfg.depths, cfg.widths, "init"));
            write_text(out / "heatmap_trained.svg",
                       sweep_svg(cells, cfg.depths, cfg.widths, "trained"));
            std::cout << "wrote sweep.csv and heat maps to " << out.string() << "\n";
            return 0;
        }

        if (*bound) {
            const NetworkParams params = load_params(bound_params);
            const DenseMatrix X = read_csv_file(bound_x);
            const DenseMatrix Y = read_csv_file(bound_y);
            const ForwardTrace t = forward(params, X);
            const ActivationTensor pat = activation_patterns(t, params);
            const StructureKind kind =
                structure == "strong" ? StructureKind::Strong : StructureKind::Weak;
            const Eigen::Index n = bound_n > 0 ? bound_n : params.arch.output_dim;
            const auto cert = detect_structure(t, params, n, bound_t, kind, bound_tol);
            if (!cert) {
                std::cerr << "no (" << n << ", " << bound_t << ") "
                          << (kind == StructureKind::Weak ? "weak" : "strong")
                          << " structure found at this point\n";
                return 2;
            }
            const std::vector<Eigen::Index> S = parse_index_list(subset_arg);
            const BoundReport r =
                kind == StructureKind::Weak
                    ? theorem2_bound(t, pat, params, Y, *cert, S, cutoff)
                    : corollary2_bound(t, pat, params, Y, *cert, S, cutoff);
            json j;
            j["certificate"] = to_json(*cert);
            j["bound"] = to_json(r);
            const std::string text = j.dump(2) + "\n";
            std::cout << text;
            fs::create_directories(out);
            write_text(out / "bound.json", text);
            return 0;
        }

        if (*prop2) {
            const Regime regime = regime_name == "over" ? Regime::Overparam : Regime::Underparam;
            const RankExperiment ex =
                rank_experiment(regime, p2_m, p2_dx, p2_d, p2_trials, seed, cutoff,
                                signed_pattern);
            std::ostringstream csv;
            csv.precision(17);
            csv << "trial,regime,m,d_x,d,rank,smallest_singular_value,loss_ratio\n";
            for (std::size_t i = 0; i < ex.trials.size(); ++i) {
                const auto& r = ex.trials[i];
                csv << i << ',' << to_string(r.regime) << ',' << r.m << ',' << r.d_x << ','
                    << r.d << ',' << r.observed_rank << ',' << r.smallest_singular_value << ','
                    << r.loss_ratio << '\n';
            }
            json summary;
            summary["seed"] = seed;
            summary["regime"] = to_string(regime);
            summary["m"] = p2_m;
            summary["d_x"] = p2_dx;
            summary["d"] = p2_d;
            summary["trials"] = ex.summary.trials;
            summary["full_rank_trials"] = ex.summary.full_rank_trials;
            summary["full_rank_fraction"] = static_cast<double>(ex.summary.full_rank_trials) /
                                            static_cast<double>(ex.summary.trials);
            summary["mean_loss_ratio"] = ex.summary.mean_loss_ratio;
            fs::create_directories(out);
            write_text(out / "prop2_trials.csv", csv.str());
            write_text(out / "prop2_summary.json", summary.dump(2) + "\n");
            std::cout << summary.dump(2) << "\n";
            return 0;
        }

        if (*lemma) {
            return run_lemma_check(seed, cutoff);
        }
    } catch (const SizeCapExceeded& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
