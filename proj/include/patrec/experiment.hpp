#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patrec/core.hpp"
#include "patrec/fbp.hpp"
#include "patrec/forward.hpp"
#include "patrec/model_io.hpp"
#include "patrec/parallel.hpp"
#include "patrec/phantoms.hpp"
#include "patrec/rng.hpp"
#include "patrec/tensor_file.hpp"
#include "patrec/tvmin.hpp"
#include "patrec/unet.hpp"

namespace patrec {

enum class PhantomClass { ellipse, shepplogan, mixed };

inline std::string to_string(PhantomClass c)
{
    switch (c) {
    case PhantomClass::ellipse: return "ellipse";
    case PhantomClass::shepplogan: return "shepplogan";
    case PhantomClass::mixed: return "mixed";
    }
    return "?";
}

inline PhantomClass parse_phantom_class(const std::string& s)
{
    if (s == "ellipse") return PhantomClass::ellipse;
    if (s == "shepplogan") return PhantomClass::shepplogan;
    if (s == "mixed") return PhantomClass::mixed;
    throw ValidationError("unknown phantom class '" + s + "' (expected ellipse, shepplogan or mixed)");
}

enum class Split : std::uint64_t { train = 1, test = 2 };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s)
{
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + s + "' (expected train or test)");
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string content_hash(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------

struct ExperimentConfig {
    int image_size = 128;
    double radius = 1.0;
    int detectors = 30;
    double final_time = 2.0;
    int time_samples = 300;

    PhantomClass phantom_class = PhantomClass::ellipse;
    int train_count = 1000;
    int test_count = 50;
    double noise_level = 0.02;
    std::uint64_t seed = 20180101;

    ForwardConfig forward{};
    FbpConfig fbp{};
    TvConfig tv{};
    UNetConfig unet{};
    nn::TrainConfig train{};
    std::string output_dir = "out";

    /// Full-scale setup: d=128, M=30, Nt=300, U-net F=32 with 5 levels.
    static ExperimentConfig full() { return {}; }

    /// Reduced sizes for CPU runs.
    static ExperimentConfig desk()
    {
        ExperimentConfig c;
        c.image_size = 64;
        c.time_samples = 150;
        c.train_count = 200;
        c.unet.features = 16;
        c.unet.levels = 4;
        c.unet.image_size = 64;
        c.train.epochs = 20;
        return c;
    }

    static ExperimentConfig preset(const std::string& name)
    {
        if (name == "full") return full();
        if (name == "desk") return desk();
        throw ValidationError("unknown preset '" + name + "' (expected full or desk)");
    }

    Grid grid() const { return Grid(image_size); }
    Geometry geometry() const { return Geometry(radius, detectors, final_time, time_samples); }

    void validate() const
    {
        const Grid g = grid();
        const Geometry geo = geometry();
        forward.validate(geo);
        fbp.validate(geo);
        tv.validate();
        unet.validate();
        train.validate();
        require(unet.image_size == g.size(), "ExperimentConfig: unet.image_size (" + std::to_string(unet.image_size) +
                                                 ") must equal image_size (" + std::to_string(g.size()) + ")");
        require(train_count >= 1 && test_count >= 1, "ExperimentConfig: sample counts must be positive");
        require(std::isfinite(noise_level) && noise_level >= 0.0, "ExperimentConfig: noise level must be nonnegative");
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    j = {{"image_size", c.image_size},
         {"radius", c.radius},
         {"detectors", c.detectors},
         {"final_time", c.final_time},
         {"time_samples", c.time_samples},
         {"phantom_class", to_string(c.phantom_class)},
         {"train_count", c.train_count},
         {"test_count", c.test_count},
         {"noise_level", c.noise_level},
         {"seed", c.seed},
         {"forward", {{"angular_samples", c.forward.angular_samples}, {"radial_samples", c.forward.radial_samples},
                      {"analytic_oversampling", c.forward.analytic_oversampling}}},
         {"fbp", {{"truncation", c.fbp.truncation}, {"radial_samples", c.fbp.radial_samples}}},
         {"tv",
          {{"lambda", c.tv.lambda},
           {"outer_iterations", c.tv.outer_iterations},
           {"inner_iterations", c.tv.inner_iterations},
           {"epsilon", c.tv.epsilon},
           {"fbp_init", c.tv.fbp_init}}},
         {"unet", c.unet},
         {"train", c.train},
         {"output_dir", c.output_dir}};
}

/// Overlays the keys present in j onto c. A "preset" key selects the base first.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    if (j.contains("preset")) c = ExperimentConfig::preset(j.at("preset").get<std::string>());
    c.image_size = j.value("image_size", c.image_size);
    c.radius = j.value("radius", c.radius);
    c.detectors = j.value("detectors", c.detectors);
    c.final_time = j.value("final_time", c.final_time);
    c.time_samples = j.value("time_samples", c.time_samples);
    if (j.contains("phantom_class")) c.phantom_class = parse_phantom_class(j.at("phantom_class").get<std::string>());
    c.train_count = j.value("train_count", c.train_count);
    c.test_count = j.value("test_count", c.test_count);
    c.noise_level = j.value("noise_level", c.noise_level);
    c.seed = j.value("seed", c.seed);
    if (j.contains("forward")) {
        const auto& f = j.at("forward");
        c.forward.angular_samples = f.value("angular_samples", c.forward.angular_samples);
        c.forward.radial_samples = f.value("radial_samples", c.forward.radial_samples);
        c.forward.analytic_oversampling = f.value("analytic_oversampling", c.forward.analytic_oversampling);
    }
    if (j.contains("fbp")) {
        const auto& f = j.at("fbp");
        c.fbp.truncation = f.value("truncation", c.fbp.truncation);
        c.fbp.radial_samples = f.value("radial_samples", c.fbp.radial_samples);
    }
    if (j.contains("tv")) {
        const auto& t = j.at("tv");
        c.tv.lambda = t.value("lambda", c.tv.lambda);
        c.tv.outer_iterations = t.value("outer_iterations", c.tv.outer_iterations);
        c.tv.inner_iterations = t.value("inner_iterations", c.tv.inner_iterations);
        c.tv.epsilon = t.value("epsilon", c.tv.epsilon);
        c.tv.fbp_init = t.value("fbp_init", c.tv.fbp_init);
    }
    if (j.contains("unet")) {
        UNetConfig u = c.unet;
        const auto& s = j.at("unet");
        u.features = s.value("features", u.features);
        u.levels = s.value("levels", u.levels);
        u.kernel = s.value("kernel", u.kernel);
        u.image_size = s.value("image_size", c.image_size);
        c.unet = u;
    } else {
        c.unet.image_size = c.image_size;
    }
    if (j.contains("train")) {
        nn::TrainConfig t = c.train;
        from_json(j.at("train"), t);
        c.train = t;
    }
    c.output_dir = j.value("output_dir", c.output_dir);
}

// ---------------------------------------------------------------------------
// Sample generation

struct Sample {
    std::size_t index;
    PhantomClass phantom_class;
    std::uint64_t phantom_seed;
    std::optional<std::uint64_t> noise_seed;
    Phantom phantom;
    Image truth;     // Y
    PressureData data;
    Image input;     // X = FBP(data)
};

/// Evaluates make(i) for i in [0, n) in parallel and returns the results in index order.
/// The first exception (lowest index) is rethrown after all workers finish.
template <class Make>
auto parallel_collect(std::size_t n, Make&& make)
{
    using R = decltype(make(std::size_t{}));
    std::vector<std::optional<R>> slots(n);
    std::vector<std::exception_ptr> errors(n);
    parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
        try {
            slots[i] = make(static_cast<std::size_t>(i));
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<R> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

/// Forward and FBP operators for one experiment configuration.
class Pipeline {
public:
    explicit Pipeline(const ExperimentConfig& config)
        : config_(validated(config)), forward_(config.grid(), config.geometry(), config.forward),
          fbp_(config.grid(), config.geometry(), config.fbp)
    {
    }

    const ExperimentConfig& config() const { return config_; }
    const WaveOperator& forward() const { return forward_; }
    const FbpOperator& fbp() const { return fbp_; }

    /// Phantom seed for sample i of a split. Train and test draw from disjoint streams.
    std::uint64_t phantom_seed(Split split, std::size_t i) const
    {
        return derive_seed(derive_seed(config_.seed, static_cast<std::uint64_t>(split)), i);
    }

    std::uint64_t noise_seed(Split split, std::size_t i) const
    {
        return derive_seed(derive_seed(config_.seed, 16 + static_cast<std::uint64_t>(split)), i);
    }

    /// Mixed sets alternate ellipse (even index) and Shepp-Logan (odd index) phantoms.
    static PhantomClass class_of(PhantomClass c, std::size_t i)
    {
        if (c != PhantomClass::mixed) return c;
        return i % 2 == 0 ? PhantomClass::ellipse : PhantomClass::shepplogan;
    }

    Sample make_sample(PhantomClass cls, Split split, std::size_t i, bool noisy) const
    {
        const PhantomClass c = class_of(cls, i);
        const std::uint64_t seed = phantom_seed(split, i);
        Phantom ph = c == PhantomClass::ellipse ? sample_ellipse_phantom(EllipseClassSpec{}, seed)
                                                : sample_shepplogan_phantom(seed);
        return make_sample(std::move(ph), c, i, seed, noisy ? std::optional(noise_seed(split, i)) : std::nullopt);
    }

    /// Truth, data and FBP input of a given phantom.
    Sample make_sample(Phantom ph, PhantomClass c, std::size_t i, std::uint64_t seed,
                       std::optional<std::uint64_t> noise) const
    {
        Image truth = rasterize(ph, config_.grid());
        PressureData data = forward_.simulate(ph);
        if (noise) data = add_noise(data, config_.noise_level, *noise);
        Image input = fbp_.reconstruct(data);
        return {i, c, seed, noise, std::move(ph), std::move(truth), std::move(data), std::move(input)};
    }

    /// Samples 0..count-1, generated in parallel.
    std::vector<Sample> make_samples(PhantomClass cls, Split split, std::size_t count, bool noisy) const
    {
        return parallel_collect(count, [&](std::size_t i) { return make_sample(cls, split, i, noisy); });
    }

private:
    static const ExperimentConfig& validated(const ExperimentConfig& c)
    {
        c.validate();
        return c;
    }

    ExperimentConfig config_;
    WaveOperator forward_;
    FbpOperator fbp_;
};

inline std::vector<TrainingPair> training_pairs(const std::vector<Sample>& samples)
{
    std::vector<TrainingPair> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({s.input, s.truth});
    return out;
}

// ---------------------------------------------------------------------------
// Datasets on disk

inline nlohmann::json geometry_json(const Geometry& g)
{
    return {{"radius", g.radius()},
            {"detectors", g.detectors()},
            {"final_time", g.final_time()},
            {"time_samples", g.time_samples()}};
}

inline Geometry geometry_from_json(const nlohmann::json& j)
{
    return Geometry(j.at("radius").get<double>(), j.at("detectors").get<int>(), j.at("final_time").get<double>(),
                    j.at("time_samples").get<int>());
}

/// Pressure TensorFile plus a "<path>.json" sidecar holding the geometry.
inline void save_pressure(const std::filesystem::path& path, const PressureData& data)
{
    save_tensor(path, to_array(data, "pressure"));
    detail::write_file(path.string() + ".json", geometry_json(data.geometry()).dump(2) + "\n");
}

inline PressureData load_pressure(const std::filesystem::path& path)
{
    const std::filesystem::path sidecar = path.string() + ".json";
    if (!std::filesystem::exists(sidecar)) throw ValidationError("missing geometry sidecar " + sidecar.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(sidecar));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("geometry sidecar " + sidecar.string() + ": " + e.what());
    }
    return pressure_from_array(load_tensor(path), geometry_from_json(j));
}

struct DatasetManifest {
    nlohmann::json json;
    std::filesystem::path directory;

    std::size_t size() const { return json.at("samples").size(); }
};

inline std::string sample_file(const char* prefix, std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.patt", prefix, i);
    return buf;
}

/// Writes pressure, FBP input and truth of each sample plus manifest.json.
inline DatasetManifest gen_dataset(const ExperimentConfig& config, PhantomClass cls, std::size_t n, bool noisy,
                                   Split split, const std::filesystem::path& dir)
{
    require(n >= 1, "gen_dataset: n must be at least 1");
    std::filesystem::create_directories(dir);
    const Pipeline pipe(config);
    nlohmann::json config_json = config;
    auto entries_list = parallel_collect(n, [&](std::size_t i) {
        try {
            const Sample s = pipe.make_sample(cls, split, i, noisy);
            save_pressure(dir / sample_file("p", i), s.data);
            save_tensor(dir / sample_file("x", i), to_array(s.input, "fbp"));
            save_tensor(dir / sample_file("y", i), to_array(s.truth, "truth"));
            nlohmann::json entry = {{"index", i},
                                    {"class", to_string(s.phantom_class)},
                                    {"phantom_seed", s.phantom_seed},
                                    {"phantom", s.phantom},
                                    {"pressure", sample_file("p", i)},
                                    {"input", sample_file("x", i)},
                                    {"target", sample_file("y", i)}};
            entry["noise_seed"] = s.noise_seed ? nlohmann::json(*s.noise_seed) : nlohmann::json(nullptr);
            return entry;
        } catch (const std::exception& e) {
            throw ValidationError("gen_dataset: sample " + std::to_string(i) + ": " + e.what());
        }
    });
    nlohmann::json entries = nlohmann::json::array();
    for (auto& e : entries_list) entries.push_back(std::move(e));
    const auto g = config.geometry();
    nlohmann::json m = {{"format", "patrec-dataset"},
                        {"version", 1},
                        {"class", to_string(cls)},
                        {"split", to_string(split)},
                        {"count", n},
                        {"noise_level", noisy ? config.noise_level : 0.0},
                        {"geometry", geometry_json(g)},
                        {"image_size", config.image_size},
                        {"config", config_json},
                        {"config_hash", content_hash(config_json.dump())},
                        {"samples", entries}};
    detail::write_file(dir / "manifest.json", m.dump(2) + "\n");
    return {std::move(m), dir};
}

/// Reads manifest.json and checks that every referenced file exists with the recorded shape.
inline DatasetManifest load_manifest(const std::filesystem::path& dir)
{
    DatasetManifest m;
    m.directory = dir;
    try {
        m.json = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("dataset manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    require(m.json.value("format", "") == "patrec-dataset", "not a dataset manifest: " + dir.string());
    const auto recorded = m.json.at("config_hash").get<std::string>();
    if (content_hash(m.json.at("config").dump()) != recorded)
        throw ValidationError("dataset " + dir.string() + ": config hash mismatch (manifest edited or corrupted)");
    return m;
}

inline ExperimentConfig manifest_config(const DatasetManifest& m)
{
    return m.json.at("config").get<ExperimentConfig>();
}

/// Loads X, Y and the pressure of each sample; throws naming the first missing or malformed file.
inline std::vector<Sample> load_samples(const DatasetManifest& m)
{
    const auto cfg = manifest_config(m);
    const auto geo = cfg.geometry();
    const int d = m.json.at("image_size").get<int>();
    std::vector<Sample> out;
    for (const auto& e : m.json.at("samples")) {
        const auto index = e.at("index").get<std::size_t>();
        auto load = [&](const char* key) {
            const auto path = m.directory / e.at(key).get<std::string>();
            if (!std::filesystem::exists(path))
                throw ValidationError("dataset sample " + std::to_string(index) + ": missing file " + path.string());
            return load_tensor(path);
        };
        std::optional<std::uint64_t> noise;
        if (!e.at("noise_seed").is_null()) noise = e.at("noise_seed").get<std::uint64_t>();
        Sample s{index,
                 parse_phantom_class(e.at("class").get<std::string>()),
                 e.at("phantom_seed").get<std::uint64_t>(),
                 noise,
                 e.at("phantom").get<Phantom>(),
                 image_from_array(load("target")),
                 pressure_from_array(load("pressure"), geo),
                 image_from_array(load("input"))};
        require(s.input.size() == d && s.truth.size() == d,
                "dataset sample " + std::to_string(index) + ": image size does not match manifest");
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reconstruction dispatch

enum class Method { fbp, tv, cnn };

inline Method parse_method(const std::string& s)
{
    if (s == "fbp") return Method::fbp;
    if (s == "tv") return Method::tv;
    if (s == "cnn") return Method::cnn;
    throw ValidationError("unknown method '" + s + "' (expected fbp, tv or cnn)");
}

inline Image reconstruct(Method method, const PressureData& data, const Pipeline& pipe,
                         const UNet<float>* model = nullptr, TvDiagnostics* tv_diag = nullptr)
{
    require(data.geometry() == pipe.forward().geometry(), "reconstruct: data geometry does not match configuration");
    switch (method) {
    case Method::fbp: return pipe.fbp().reconstruct(data);
    case Method::tv: return tv_reconstruct(data, pipe.forward(), pipe.config().tv, tv_diag);
    case Method::cnn:
        require(model != nullptr, "reconstruct: method cnn requires a trained model");
        require(model->config().image_size == pipe.config().image_size,
                "reconstruct: model image size does not match the grid");
        return model->forward(pipe.fbp().reconstruct(data));
    }
    throw ValidationError("reconstruct: unknown method");
}

// ---------------------------------------------------------------------------
// Error tables

struct TableColumn {
    std::string name;               // "FBP", "TV", or a model label
    std::vector<double> errors;
    std::vector<double> seconds;    // per-image wall time
    double mean_error = 0.0;
    double mean_seconds = 0.0;
};

struct ErrorTable {
    std::vector<TableColumn> columns;
    std::vector<std::string> missing;  // requested cells that could not be produced

    const TableColumn* column(const std::string& name) const
    {
        for (const auto& c : columns)
            if (c.name == name) return &c;
        return nullptr;
    }

    nlohmann::json to_json() const
    {
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& c : columns)
            cols.push_back({{"name", c.name},
                            {"errors", c.errors},
                            {"seconds", c.seconds},
                            {"mean_error", c.mean_error},
                            {"mean_seconds", c.mean_seconds}});
        return {{"columns", cols}, {"missing", missing}};
    }

    std::string to_text() const
    {
        std::string out;
        char buf[64];
        out += "case";
        for (const auto& c : columns) {
            std::snprintf(buf, sizeof buf, " %10s", c.name.c_str());
            out += buf;
        }
        out += "\n";
        const std::size_t rows = columns.empty() ? 0 : columns.front().errors.size();
        for (std::size_t r = 0; r < rows; ++r) {
            std::snprintf(buf, sizeof buf, "%4zu", r);
            out += buf;
            for (const auto& c : columns) {
                std::snprintf(buf, sizeof buf, " %10.4f", c.errors[r]);
                out += buf;
            }
            out += "\n";
        }
        out += "mean";
        for (const auto& c : columns) {
            std::snprintf(buf, sizeof buf, " %10.4f", c.mean_error);
            out += buf;
        }
        out += "\ntime";
        for (const auto& c : columns) {
            std::snprintf(buf, sizeof buf, " %9.4fs", c.mean_seconds);
            out += buf;
        }
        out += "\n";
        for (const auto& m : missing) out += "missing: " + m + "\n";
        return out;
    }
};

inline void finalize(TableColumn& c)
{
    double e = 0.0, t = 0.0;
    for (double v : c.errors) e += v;
    for (double v : c.seconds) t += v;
    c.mean_error = c.errors.empty() ? 0.0 : e / static_cast<double>(c.errors.size());
    c.mean_seconds = c.seconds.empty() ? 0.0 : t / static_cast<double>(c.seconds.size());
}

struct NamedModel {
    std::string label;
    const UNet<float>* model;
};

/// One column per method; each CNN column times FBP plus the network.
inline ErrorTable run_table(const std::vector<Sample>& test, const Pipeline& pipe, bool include_fbp, bool include_tv,
                            const std::vector<NamedModel>& models)
{
    require(!test.empty(), "run_table: test set is empty");
    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
    ErrorTable table;
    if (include_fbp) {
        TableColumn c{"FBP", {}, {}, 0, 0};
        for (const auto& s : test) {
            const auto t0 = clock::now();
            const auto x = pipe.fbp().reconstruct(s.data);
            c.seconds.push_back(seconds(t0, clock::now()));
            c.errors.push_back(rel_l2_error(x, s.truth));
        }
        finalize(c);
        table.columns.push_back(std::move(c));
    }
    if (include_tv) {
        TableColumn c{"TV", {}, {}, 0, 0};
        for (const auto& s : test) {
            const auto t0 = clock::now();
            const auto x = tv_reconstruct(s.data, pipe.forward(), pipe.config().tv);
            c.seconds.push_back(seconds(t0, clock::now()));
            c.errors.push_back(rel_l2_error(x, s.truth));
        }
        finalize(c);
        table.columns.push_back(std::move(c));
    }
    for (const auto& nm : models) {
        if (!nm.model) {
            table.missing.push_back(nm.label);
            continue;
        }
        TableColumn c{nm.label, {}, {}, 0, 0};
        for (const auto& s : test) {
            const auto t0 = clock::now();
            const auto x = nm.model->forward(pipe.fbp().reconstruct(s.data));
            c.seconds.push_back(seconds(t0, clock::now()));
            c.errors.push_back(rel_l2_error(x, s.truth));
        }
        finalize(c);
        table.columns.push_back(std::move(c));
    }
    return table;
}

}  // namespace patrec
