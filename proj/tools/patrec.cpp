// patrec: dataset generation, training, reconstruction and evaluation.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "patrec/experiment.hpp"
#include "patrec/model_io.hpp"
#include "patrec/nn/gradcheck.hpp"
#include "patrec/parallel.hpp"
#include "patrec/pgm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patrec;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

/// Options shared by every subcommand that needs an experiment configuration.
struct ConfigOptions {
    std::string config_file;
    std::string preset = "full";
    std::optional<int> image_size, detectors, time_samples, angular_samples;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise_level;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config_file, "JSON configuration file")->check(CLI::ExistingFile);
        app->add_option("--preset", preset, "base configuration: full or desk")->capture_default_str();
        app->add_option("--image-size", image_size, "pixels per side (d)");
        app->add_option("--detectors", detectors, "detector count (M)");
        app->add_option("--time-samples", time_samples, "time samples (Nt)");
        app->add_option("--angular-samples", angular_samples, "quadrature points per circular mean");
        app->add_option("--seed", seed, "master seed");
        app->add_option("--noise-level", noise_level, "noise std as a fraction of max |p|");
    }

    ExperimentConfig resolve(std::map<std::string, std::string>* inputs) const
    {
        ExperimentConfig c = ExperimentConfig::preset(preset);
        if (!config_file.empty()) {
            const auto text = detail::read_file(config_file);
            if (inputs) (*inputs)[config_file] = content_hash(text);
            try {
                json j = json::parse(text);
                if (!j.contains("preset")) j["preset"] = preset;
                c = j.get<ExperimentConfig>();
            } catch (const json::exception& e) {
                throw ValidationError("config " + config_file + ": " + e.what());
            }
        }
        if (image_size) {
            c.image_size = *image_size;
            c.unet.image_size = *image_size;
        }
        if (detectors) c.detectors = *detectors;
        if (time_samples) c.time_samples = *time_samples;
        if (angular_samples) c.forward.angular_samples = *angular_samples;
        if (seed) c.seed = *seed;
        if (noise_level) c.noise_level = *noise_level;
        c.validate();
        return c;
    }
};

/// Reproducibility record written next to every output.
struct RunRecord {
    std::string command;
    std::vector<std::string> argv;
    json config = nullptr;
    json extra = json::object();
    std::map<std::string, std::string> inputs;  // path → content hash
    std::vector<std::string> outputs;

    void add_input(const fs::path& path)
    {
        if (fs::is_regular_file(path)) inputs[path.string()] = content_hash(detail::read_file(path));
    }

    void write(const fs::path& path) const
    {
        json j = {{"command", command}, {"argv", argv},     {"config", config},
                  {"inputs", inputs},   {"outputs", outputs}, {"threads", configure_threads_from_env()}};
        for (auto& [k, v] : extra.items()) j[k] = v;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        detail::write_file(path, j.dump(2) + "\n");
    }
};

fs::path record_path(const fs::path& output)
{
    if (fs::is_directory(output)) return output / "run.json";
    return fs::path(output.string() + ".run.json");
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace

int main(int argc, char** argv)
{
    configure_threads_from_env();
    CLI::App app{"Sparse-data photoacoustic reconstruction: FBP, TV and residual U-net"};
    app.require_subcommand(1);
    RunRecord record;
    for (int i = 0; i < argc; ++i) record.argv.emplace_back(argv[i]);

    // gen-data -------------------------------------------------------------
    ConfigOptions gen_cfg;
    std::string gen_class = "ellipse", gen_split = "train", gen_out;
    std::optional<int> gen_count;
    bool gen_noisy = false;
    auto* gen = app.add_subcommand("gen-data", "generate phantoms, pressure data and FBP inputs");
    gen_cfg.attach(gen);
    gen->add_option("--class", gen_class, "ellipse, shepplogan or mixed")->capture_default_str();
    gen->add_option("--split", gen_split, "train or test (disjoint seed streams)")->capture_default_str();
    gen->add_option("-n,--count", gen_count, "number of samples (default: train_count or test_count)");
    gen->add_flag("--noisy", gen_noisy, "add Gaussian noise at the configured level");
    gen->add_option("-o,--out", gen_out, "output directory")->required();

    // train ----------------------------------------------------------------
    ConfigOptions train_cfg;
    std::string train_data, train_model, train_log;
    std::optional<int> train_epochs, train_features, train_levels, train_batch;
    std::optional<double> train_lr, train_momentum;
    std::uint64_t init_seed = 7;
    auto* train = app.add_subcommand("train", "train the residual U-net on a dataset");
    train_cfg.attach(train);
    train->add_option("--data", train_data, "training dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("-o,--model", train_model, "output model file")->required();
    train->add_option("--log", train_log, "loss history JSON (default: <model>.loss.json)");
    train->add_option("--epochs", train_epochs);
    train->add_option("--features", train_features, "channels at the first level");
    train->add_option("--levels", train_levels, "resolution levels");
    train->add_option("--batch", train_batch);
    train->add_option("--lr", train_lr, "learning rate");
    train->add_option("--momentum", train_momentum);
    train->add_option("--init-seed", init_seed, "weight initialization seed")->capture_default_str();

    // reconstruct ----------------------------------------------------------
    ConfigOptions rec_cfg;
    std::string rec_method = "fbp", rec_pressure, rec_dataset, rec_model, rec_out, rec_pgm;
    int rec_index = 0;
    auto* rec = app.add_subcommand("reconstruct", "reconstruct one image with fbp, tv or cnn");
    rec_cfg.attach(rec);
    rec->add_option("-m,--method", rec_method, "fbp, tv or cnn")->capture_default_str();
    rec->add_option("--pressure", rec_pressure, "pressure TensorFile (M x Nt)")->check(CLI::ExistingFile);
    rec->add_option("--dataset", rec_dataset, "dataset directory (uses its config)")->check(CLI::ExistingDirectory);
    rec->add_option("--index", rec_index, "sample index within --dataset")->capture_default_str();
    rec->add_option("--model", rec_model, "trained model file (cnn)");
    rec->add_option("-o,--out", rec_out, "output image TensorFile")->required();
    rec->add_option("--pgm", rec_pgm, "also export a PGM with window [0, 1]");

    // eval-table -----------------------------------------------------------
    std::string eval_test, eval_out;
    std::vector<std::string> eval_models;
    bool eval_fbp = true, eval_tv = false;
    std::optional<int> eval_limit;
    auto* eval = app.add_subcommand("eval-table", "relative l2 errors and timings per method");
    eval->add_option("--test", eval_test, "test dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--model", eval_models, "LABEL=PATH of a trained model (repeatable)");
    eval->add_flag("--fbp,!--no-fbp", eval_fbp, "include the FBP column");
    eval->add_flag("--tv", eval_tv, "include the TV column");
    eval->add_option("--limit", eval_limit, "use only the first N test samples");
    eval->add_option("-o,--out", eval_out, "output JSON (text table goes to stdout)");

    // export-pgm -----------------------------------------------------------
    std::string pgm_in, pgm_out;
    double pgm_lo = 0.0, pgm_hi = 1.0;
    auto* pgm = app.add_subcommand("export-pgm", "render an image TensorFile as 16-bit PGM");
    pgm->add_option("input", pgm_in, "image TensorFile")->required()->check(CLI::ExistingFile);
    pgm->add_option("output", pgm_out, "PGM path")->required();
    pgm->add_option("--lo", pgm_lo, "value mapped to black")->capture_default_str();
    pgm->add_option("--hi", pgm_hi, "value mapped to white")->capture_default_str();

    // gradcheck ------------------------------------------------------------
    std::uint64_t gc_seed = 1;
    int gc_configs = 10;
    std::string gc_out;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every network layer (64-bit)");
    gc->add_option("--seed", gc_seed)->capture_default_str();
    gc->add_option("--configs", gc_configs, "random configurations per layer")->capture_default_str();
    gc->add_option("-o,--out", gc_out, "JSON report");

    // adjoint-test ---------------------------------------------------------
    ConfigOptions adj_cfg;
    int adj_pairs = 20;
    double adj_tol = 1e-10;
    std::string adj_out;
    auto* adj = app.add_subcommand("adjoint-test", "dot-product test of the discrete forward operator");
    adj_cfg.attach(adj);
    adj->add_option("--pairs", adj_pairs)->capture_default_str();
    adj->add_option("--tol", adj_tol)->capture_default_str();
    adj->add_option("-o,--out", adj_out, "JSON report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    try {
        if (*gen) {
            record.command = "gen-data";
            auto c = gen_cfg.resolve(&record.inputs);
            const auto cls = parse_phantom_class(gen_class);
            const auto split = parse_split(gen_split);
            const int n = gen_count.value_or(split == Split::train ? c.train_count : c.test_count);
            require(n >= 1, "gen-data: --count must be at least 1");
            Timer t;
            const auto m = gen_dataset(c, cls, static_cast<std::size_t>(n), gen_noisy, split, gen_out);
            record.config = c;
            record.outputs.push_back((fs::path(gen_out) / "manifest.json").string());
            record.extra["seconds"] = t.seconds();
            record.extra["split"] = gen_split;
            record.extra["class"] = gen_class;
            record.extra["noisy"] = gen_noisy;
            record.write(fs::path(gen_out) / "run.json");
            std::printf("wrote %zu samples to %s (%.1f s)\n", m.size(), gen_out.c_str(), t.seconds());
        } else if (*train) {
            record.command = "train";
            const auto manifest = load_manifest(train_data);
            record.add_input(fs::path(train_data) / "manifest.json");
            auto c = manifest_config(manifest);
            if (!train_cfg.config_file.empty()) {
                auto override_cfg = train_cfg.resolve(&record.inputs);
                c.unet = override_cfg.unet;
                c.train = override_cfg.train;
            }
            if (train_epochs) c.train.epochs = *train_epochs;
            if (train_features) c.unet.features = *train_features;
            if (train_levels) c.unet.levels = *train_levels;
            if (train_batch) c.train.batch_size = *train_batch;
            if (train_lr) c.train.learning_rate = *train_lr;
            if (train_momentum) c.train.momentum = *train_momentum;
            if (train_cfg.seed) c.train.seed = *train_cfg.seed;
            c.unet.image_size = c.image_size;
            c.validate();

            const auto samples = load_samples(manifest);
            UNet<float> net(c.unet, init_seed);
            UNetTrainer<float> trainer(net, c.train);
            Timer t;
            const auto history = trainer.train(training_pairs(samples), [&](int epoch, double loss) {
                std::printf("epoch %3d  loss %.6f  (%.0f s)\n", epoch + 1, loss, t.seconds());
                std::fflush(stdout);
            });
            const json meta = {{"train", c.train},
                               {"init_seed", init_seed},
                               {"dataset", train_data},
                               {"dataset_config_hash", manifest.json.at("config_hash")},
                               {"epoch_loss", history.epoch_loss}};
            save_model(train_model, net, meta, &trainer.velocity());
            const std::string log = train_log.empty() ? train_model + ".loss.json" : train_log;
            detail::write_file(log, json({{"epoch_loss", history.epoch_loss}, {"step_loss", history.step_loss}}).dump() +
                                        "\n");
            record.config = c;
            record.extra["init_seed"] = init_seed;
            record.extra["seconds"] = t.seconds();
            record.outputs = {train_model, log};
            record.write(record_path(train_model));
        } else if (*rec) {
            record.command = "reconstruct";
            const auto method = parse_method(rec_method);
            ExperimentConfig c;
            std::optional<PressureData> data;
            std::optional<Image> truth;
            if (!rec_dataset.empty()) {
                const auto m = load_manifest(rec_dataset);
                record.add_input(fs::path(rec_dataset) / "manifest.json");
                c = manifest_config(m);
                const auto& entries = m.json.at("samples");
                require(rec_index >= 0 && static_cast<std::size_t>(rec_index) < entries.size(),
                        "reconstruct: --index out of range");
                const auto& e = entries.at(static_cast<std::size_t>(rec_index));
                const auto p = fs::path(rec_dataset) / e.at("pressure").get<std::string>();
                record.add_input(p);
                data = pressure_from_array(load_tensor(p), c.geometry());
                truth = image_from_array(load_tensor(fs::path(rec_dataset) / e.at("target").get<std::string>()));
            } else {
                require(!rec_pressure.empty(), "reconstruct: give --pressure or --dataset");
                c = rec_cfg.resolve(&record.inputs);
                record.add_input(rec_pressure);
                if (fs::exists(rec_pressure + ".json")) {
                    data = load_pressure(rec_pressure);
                    require(data->geometry() == c.geometry(),
                            "reconstruct: pressure geometry differs from the configuration (check --detectors, "
                            "--time-samples or --preset)");
                } else {
                    data = pressure_from_array(load_tensor(rec_pressure), c.geometry());
                }
            }
            std::optional<UNet<float>> model;
            if (method == Method::cnn) {
                require(!rec_model.empty(), "reconstruct: method cnn requires --model");
                require(fs::exists(rec_model), "reconstruct: model file not found: " + rec_model);
                record.add_input(rec_model);
                model = load_model<float>(rec_model).net;
            }
            const Pipeline pipe(c);
            Timer t;
            TvDiagnostics diag;
            const Image img = reconstruct(method, *data, pipe, model ? &*model : nullptr, &diag);
            const double secs = t.seconds();
            save_tensor(rec_out, to_array(img, rec_method));
            record.outputs.push_back(rec_out);
            if (!rec_pgm.empty()) {
                export_pgm(img, rec_pgm, 0.0, 1.0);
                record.outputs.push_back(rec_pgm);
            }
            record.config = c;
            record.extra["method"] = rec_method;
            record.extra["seconds"] = secs;
            if (method == Method::tv) record.extra["tv"] = diag.to_json();
            if (truth) {
                record.extra["rel_l2_error"] = rel_l2_error(img, *truth);
                std::printf("%s: relative l2 error %.4f (%.3f s)\n", rec_method.c_str(), rel_l2_error(img, *truth), secs);
            } else {
                std::printf("%s: done (%.3f s)\n", rec_method.c_str(), secs);
            }
            record.write(record_path(rec_out));
        } else if (*eval) {
            record.command = "eval-table";
            const auto m = load_manifest(eval_test);
            record.add_input(fs::path(eval_test) / "manifest.json");
            const auto c = manifest_config(m);
            auto samples = load_samples(m);
            if (eval_limit) {
                require(*eval_limit >= 1, "eval-table: --limit must be positive");
                if (samples.size() > static_cast<std::size_t>(*eval_limit)) samples.erase(samples.begin() + *eval_limit, samples.end());
            }
            std::vector<std::pair<std::string, std::optional<UNet<float>>>> loaded;
            for (const auto& spec : eval_models) {
                const auto eq = spec.find('=');
                require(eq != std::string::npos && eq > 0, "eval-table: --model expects LABEL=PATH, got '" + spec + "'");
                const std::string label = spec.substr(0, eq), path = spec.substr(eq + 1);
                if (!fs::exists(path)) {
                    std::fprintf(stderr, "warning: model %s not found at %s\n", label.c_str(), path.c_str());
                    loaded.emplace_back(label, std::nullopt);
                    continue;
                }
                record.add_input(path);
                loaded.emplace_back(label, load_model<float>(path).net);
            }
            std::vector<NamedModel> models;
            for (const auto& [label, net] : loaded) models.push_back({label, net ? &*net : nullptr});
            const Pipeline pipe(c);
            const auto table = run_table(samples, pipe, eval_fbp, eval_tv, models);
            std::cout << table.to_text();
            record.config = c;
            if (!eval_out.empty()) {
                detail::write_file(eval_out, table.to_json().dump(2) + "\n");
                record.outputs.push_back(eval_out);
                record.write(record_path(eval_out));
            }
            if (!table.missing.empty()) return kExitValidation;
        } else if (*pgm) {
            record.command = "export-pgm";
            const auto img = image_from_array(load_tensor(pgm_in));
            export_pgm(img, pgm_out, pgm_lo, pgm_hi);
            record.add_input(pgm_in);
            record.outputs.push_back(pgm_out);
            record.extra["window"] = {pgm_lo, pgm_hi};
            record.write(record_path(pgm_out));
        } else if (*gc) {
            record.command = "gradcheck";
            require(gc_configs >= 1, "gradcheck: --configs must be positive");
            Timer t;
            const auto results = nn::run_gradient_suite(gc_seed, gc_configs);
            std::map<std::string, std::pair<double, int>> worst;  // layer → (max deviation, failures)
            int failures = 0;
            for (const auto& r : results) {
                auto& w = worst[r.layer];
                w.first = std::max(w.first, r.deviation);
                if (!r.passed()) {
                    ++w.second;
                    ++failures;
                }
            }
            for (const auto& [layer, w] : worst)
                std::printf("%-28s max deviation %.3e  %s\n", layer.c_str(), w.first, w.second ? "FAIL" : "ok");
            std::printf("%zu checks, %d failed (%.1f s)\n", results.size(), failures, t.seconds());
            if (!gc_out.empty()) {
                record.extra["results"] = results;
                record.extra["seed"] = gc_seed;
                record.outputs.push_back(gc_out);
                record.write(gc_out);
            }
            if (failures) return kExitNumerical;
        } else if (*adj) {
            record.command = "adjoint-test";
            const auto c = adj_cfg.resolve(&record.inputs);
            const WaveOperator op(c.grid(), c.geometry(), c.forward);
            CounterRng rng(derive_seed(c.seed, 0xAD));
            double worst = 0.0;
            json pairs = json::array();
            for (int i = 0; i < adj_pairs; ++i) {
                Image x(c.grid());
                for (auto& v : x.values()) v = rng.uniform(-1.0, 1.0);
                PressureData q(c.geometry());
                for (auto& v : q.values()) v = rng.uniform(-1.0, 1.0);
                const auto px = op.apply_forward(x);
                const auto aq = op.apply_adjoint(q);
                const double lhs = dot(px.values(), q.values());
                const double rhs = dot(x.values(), aq.values());
                const double rel = std::abs(lhs - rhs) / (l2_norm(px.values()) * l2_norm(q.values()));
                worst = std::max(worst, rel);
                pairs.push_back(rel);
            }
            std::printf("%d pairs, worst relative mismatch %.3e (tolerance %.1e)\n", adj_pairs, worst, adj_tol);
            if (!adj_out.empty()) {
                record.config = c;
                record.extra["mismatch"] = pairs;
                record.outputs.push_back(adj_out);
                record.write(adj_out);
            }
            if (!(worst <= adj_tol)) return kExitNumerical;
        }
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kExitNumerical;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
        return kExitValidation;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
