#include "mmcda/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace mmcda {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw std::invalid_argument("unknown domain '" + s + "'");
}

bool DomainDataset::fully_annotated() const {
    return std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.boundary.has_value(); });
}

UnlabeledView strip_labels(const DomainDataset& dataset) {
    UnlabeledView view;
    view.reserve(dataset.samples.size());
    for (const auto& s : dataset.samples) view.push_back({&s.video, &s.query});
    return view;
}

void GenConfig::validate() const {
    auto check_profile = [](const DomainProfile& p, const char* which) {
        const std::string w = which;
        if (p.count < 1) throw ConfigError(w + ": count must be >= 1");
        if (p.t_min < 1 || p.t_max < p.t_min) throw ConfigError(w + ": invalid video length range");
        if (p.n_min < 1 || p.n_max < p.n_min) throw ConfigError(w + ": invalid query length range");
        if (!(p.moment_min > 0.0) || p.moment_max < p.moment_min || p.moment_max > 1.0)
            throw ConfigError(w + ": moment fractions must satisfy 0 < min <= max <= 1");
    };
    check_profile(source, "source");
    check_profile(target, "target");
    if (raw_dim < 2 || event_dim < 1) throw ConfigError("generate: raw_dim must be >= 2 and event_dim >= 1");
    if (events < 3) throw ConfigError("generate: need at least 3 events (one planted, two distractors)");
    if (tokens_per_event < 1 || filler_tokens < 0) throw ConfigError("generate: invalid codebook sizes");
    if (!(noise >= 0.0)) throw ConfigError("generate: noise must be non-negative");
    if (!(signal_scale > 0.0)) throw ConfigError("generate: signal_scale must be positive");
    if (event_token_prob <= 0.0 || event_token_prob > 1.0)
        throw ConfigError("generate: event_token_prob must lie in (0, 1]");
    if (shift.scale_spread < 0.0 || shift.scale_spread >= 1.0)
        throw ConfigError("generate: scale_spread must lie in [0, 1)");
}

DomainProfile profile_preset(const std::string& name) {
    if (name == "activity") return {200, 24, 32, 0.25, 0.5, 5, 8};
    if (name == "charades") return {200, 12, 16, 0.15, 0.3, 4, 6};
    if (name == "tacos") return {100, 32, 40, 0.05, 0.15, 6, 9};
    throw ConfigError("unknown profile '" + name + "' (expected activity, charades or tacos)");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t child_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(master ^ splitmix64(stream)) + index);
}

Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
    return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Shared structure of both domains: event prototypes, the linear map from
// events to raw frame features, and the target-domain shift.
struct World {
    Matrix prototypes;  // events x event_dim
    Matrix mixing;      // event_dim x raw_dim
    Matrix rotation;    // raw_dim x raw_dim (applied to row vectors on the right)
    RowVector scales;
    RowVector translation;
};

World make_world(const GenConfig& c) {
    std::mt19937_64 rng(child_seed(c.seed, 0, 0));
    std::normal_distribution<double> normal(0.0, 1.0);
    World w;
    w.prototypes.resize(c.events, c.event_dim);
    for (Index i = 0; i < w.prototypes.size(); ++i) w.prototypes.data()[i] = normal(rng);
    w.mixing.resize(c.event_dim, c.raw_dim);
    const double ms = 1.0 / std::sqrt(static_cast<double>(c.event_dim));
    for (Index i = 0; i < w.mixing.size(); ++i) w.mixing.data()[i] = ms * normal(rng);

    // Rotation by the configured angle inside the plane spanned by two random orthonormal directions.
    Eigen::VectorXd a(c.raw_dim), b(c.raw_dim);
    for (Index i = 0; i < c.raw_dim; ++i) a(i) = normal(rng);
    for (Index i = 0; i < c.raw_dim; ++i) b(i) = normal(rng);
    a.normalize();
    b -= b.dot(a) * a;
    b.normalize();
    const double theta = c.shift.rotation_deg * std::numbers::pi / 180.0;
    const Matrix eye = Matrix::Identity(c.raw_dim, c.raw_dim);
    Matrix r = eye + (std::cos(theta) - 1.0) * (a * a.transpose() + b * b.transpose()) +
               std::sin(theta) * (b * a.transpose() - a * b.transpose());
    w.rotation = r.transpose();

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    w.scales.resize(c.raw_dim);
    w.translation.resize(c.raw_dim);
    for (Index i = 0; i < c.raw_dim; ++i) w.scales(i) = 1.0 + c.shift.scale_spread * unit(rng);
    for (Index i = 0; i < c.raw_dim; ++i) w.translation(i) = (unit(rng) < 0.0 ? -1.0 : 1.0) * c.shift.translation;
    return w;
}

Sample make_sample(const GenConfig& c, const World& w, const DomainProfile& p, Domain domain, Index index) {
    std::mt19937_64 rng(child_seed(c.seed, domain == Domain::source ? 1 : 2, static_cast<std::uint64_t>(index)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const Index t = uniform_index(rng, p.t_min, p.t_max);
    const double frac = p.moment_min + (p.moment_max - p.moment_min) * unit(rng);
    const Index len = std::clamp<Index>(static_cast<Index>(std::lround(frac * static_cast<double>(t))), 1, t);
    const Index start = uniform_index(rng, 0, t - len);
    const MomentBoundary boundary{start, start + len - 1};

    const Index event = uniform_index(rng, 0, c.events - 1);
    auto distractor = [&]() {
        Index e = uniform_index(rng, 0, c.events - 2);
        return e >= event ? e + 1 : e;
    };
    const Index before = distractor();
    const Index after = distractor();

    const Matrix images = c.signal_scale * ordered_product(w.prototypes, w.mixing);  // events x raw_dim
    Matrix video(t, c.raw_dim);
    for (Index f = 0; f < t; ++f) {
        const Index e = boundary.contains(f) ? event : (f < boundary.start ? before : after);
        for (Index j = 0; j < c.raw_dim; ++j) video(f, j) = images(e, j) + c.noise * normal(rng);
    }
    if (domain == Domain::target) {
        Matrix scaled = video.array().rowwise() * w.scales.array();
        video = ordered_product(scaled, w.rotation);
        video.rowwise() += w.translation;
    }
    video = video.unaryExpr(&to_float32);

    const Index n = uniform_index(rng, p.n_min, p.n_max);
    std::vector<int> query(static_cast<std::size_t>(n));
    const Index anchor = uniform_index(rng, 0, n - 1);  // one guaranteed event token
    const Index event_base = event * c.tokens_per_event;
    const Index filler_base = c.events * c.tokens_per_event;
    for (Index k = 0; k < n; ++k) {
        const bool event_token = k == anchor || c.filler_tokens == 0 || unit(rng) < c.event_token_prob;
        const Index id = event_token ? event_base + uniform_index(rng, 0, c.tokens_per_event - 1)
                                     : filler_base + uniform_index(rng, 0, c.filler_tokens - 1);
        query[static_cast<std::size_t>(k)] = static_cast<int>(id);
    }

    char id[32];
    std::snprintf(id, sizeof id, "%s_%05ld", domain == Domain::source ? "src" : "tgt", static_cast<long>(index));
    return {id, FeatureSequence(std::move(video)), std::move(query), boundary};
}

}  // namespace

GeneratedPair generate(const GenConfig& config) {
    config.validate();
    const World world = make_world(config);
    GeneratedPair out;
    auto fill = [&](DomainDataset& ds, const DomainProfile& p, Domain d) {
        ds.domain = d;
        ds.seed = config.seed;
        ds.dim = config.raw_dim;
        ds.vocab_size = config.vocab_size();
        ds.samples.reserve(static_cast<std::size_t>(p.count));
        for (Index i = 0; i < p.count; ++i) ds.samples.push_back(make_sample(config, world, p, d, i));
    };
    fill(out.source, config.source, Domain::source);
    fill(out.target, config.target, Domain::target);
    return out;
}

// ---- on-disk format --------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "feature files are written in host order");

void write_floats(const fs::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    std::vector<float> buf(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Matrix read_floats(const fs::path& path, Index rows, Index cols, const std::string& sample) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    const auto bytes = static_cast<std::uintmax_t>(in.tellg());
    const auto expected = static_cast<std::uintmax_t>(rows * cols) * sizeof(float);
    if (bytes != expected)
        throw ShapeError("sample '" + sample + "': '" + path.filename().string() + "' holds " + std::to_string(bytes) +
                         " bytes, declared " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                         std::to_string(expected));
    in.seekg(0);
    std::vector<float> buf(static_cast<std::size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    if (!in) throw IoError("failed reading '" + path.string() + "'");
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(buf[static_cast<std::size_t>(i)]);
    return m;
}

}  // namespace

void save_dataset(const DomainDataset& dataset, const fs::path& directory) {
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) throw IoError("cannot create '" + directory.string() + "': " + ec.message());

    json samples = json::array();
    for (const auto& s : dataset.samples) {
        const std::string video_file = s.id + ".video.f32";
        const std::string query_file = s.id + ".query.f32";
        write_floats(directory / video_file, s.video.values());
        Matrix ids(static_cast<Index>(s.query.size()), 1);
        for (std::size_t k = 0; k < s.query.size(); ++k) ids(static_cast<Index>(k), 0) = s.query[k];
        write_floats(directory / query_file, ids);
        json entry = {{"id", s.id},
                      {"video_file", video_file},
                      {"query_file", query_file},
                      {"T", s.video.length()},
                      {"N", s.query.size()}};
        entry["boundary"] = s.boundary ? json::array({s.boundary->start, s.boundary->end}) : json(nullptr);
        samples.push_back(std::move(entry));
    }
    const json manifest = {{"domain", to_string(dataset.domain)},
                           {"dim", dataset.dim},
                           {"vocab_size", dataset.vocab_size},
                           {"seed", dataset.seed},
                           {"samples", std::move(samples)}};
    const fs::path path = directory / "manifest.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

DomainDataset load_dataset(const fs::path& directory) {
    const fs::path path = directory / "manifest.json";
    std::ifstream in(path);
    if (!in) throw IoError("missing manifest '" + path.string() + "'");
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("malformed manifest '" + path.string() + "': " + e.what());
    }
    DomainDataset ds;
    try {
        ds.domain = domain_from_string(m.at("domain").get<std::string>());
        ds.dim = m.at("dim").get<Index>();
        ds.vocab_size = m.value("vocab_size", Index{0});
        ds.seed = m.value("seed", std::uint64_t{0});
        if (ds.dim < 1) throw ConfigError("dim must be >= 1");
        for (const auto& e : m.at("samples")) {
            Sample s;
            s.id = e.at("id").get<std::string>();
            const Index t = e.at("T").get<Index>();
            const Index n = e.at("N").get<Index>();
            if (t < 1 || n < 1) throw ConfigError("sample '" + s.id + "': T and N must be >= 1");
            s.video = FeatureSequence(read_floats(directory / e.at("video_file").get<std::string>(), t, ds.dim, s.id));
            const Matrix ids = read_floats(directory / e.at("query_file").get<std::string>(), n, 1, s.id);
            for (Index k = 0; k < n; ++k) {
                const double v = ids(k, 0);
                if (v < 0.0 || v != std::floor(v) || (ds.vocab_size > 0 && v >= static_cast<double>(ds.vocab_size)))
                    throw ConfigError("sample '" + s.id + "': invalid token id " + std::to_string(v));
                s.query.push_back(static_cast<int>(v));
            }
            const auto& b = e.at("boundary");
            if (!b.is_null()) {
                MomentBoundary mb{b.at(0).get<Index>(), b.at(1).get<Index>()};
                if (mb.start < 0 || mb.end < mb.start || mb.end >= t)
                    throw ConfigError("sample '" + s.id + "': boundary outside [0, T)");
                s.boundary = mb;
            }
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw ConfigError("malformed manifest '" + path.string() + "': " + e.what());
    }
    return ds;
}

}  // namespace mmcda
