#include "diffrx/harness.hpp"

#include "diffrx/error.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace diffrx::harness {

namespace {

// Reads an object, remembering which keys were consumed so leftovers can be
// reported.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }
    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + ": has the wrong type (" + std::string(j_.at(key).type_name()) + ")");
        }
    }

    // Nested object, or null when absent.
    const json* child(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.contains(k)) throw ConfigError(where(k.c_str()) + ": unknown key");
    }

    // Runs a name parser, prefixing its error with this key's path.
    template <class F>
    auto parse(const char* key, const std::string& value, F&& fn) const {
        try {
            return fn(value);
        } catch (const ConfigError& e) {
            throw ConfigError(where(key) + ": " + e.what());
        }
    }

    std::string where(const char* key = nullptr) const {
        const std::string base = path_.empty() ? "config" : "config." + path_;
        return key ? base + "." + key : base;
    }
    std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_channel(const json& j, const std::string& path, chansim::ChannelModelConfig& c) {
    Reader r(j, path);
    r.get("num_paths", c.num_paths);
    r.get("delay_spread", c.delay_spread);
    r.get("max_doppler", c.max_doppler);
    r.get("subcarrier_spacing", c.subcarrier_spacing);
    r.get("num_subcarriers", c.num_subcarriers);
    r.get("num_symbols", c.num_symbols);
    r.get("symbol_duration", c.symbol_duration);
    r.get("seed", c.seed);
    r.finish();
}

void read_pilots(const json& j, const std::string& path, trainer::PilotSpec& p, std::vector<std::size_t>& spacings) {
    Reader r(j, path);
    std::string scheme = pilots::scheme_name(p.scheme);
    r.get("scheme", scheme);
    p.scheme = r.parse("scheme", scheme, pilots::parse_scheme);
    r.get("spacings", spacings);
    r.get("time_stride", p.time_stride);
    r.get("block_symbols", p.block_symbols);
    r.get("randomize_offset", p.randomize_offset);
    r.finish();
}

void read_denoiser(const json& j, const std::string& path, denoiser::DenoiserConfig& d) {
    Reader r(j, path);
    r.get("base_channels", d.base_channels);
    r.get("depth", d.depth);
    r.get("kernel", d.kernel);
    r.get("time_embed_dim", d.time_embed_dim);
    r.get("groups", d.groups);
    r.get("x_skip", d.x_skip);
    r.finish();
}

void read_trainer(const json& j, const std::string& path, trainer::TrainConfig& t) {
    Reader r(j, path);
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("lr", t.lr);
    std::vector<double> snr{t.snr_low_db, t.snr_high_db};
    r.get("snr_range_db", snr);
    if (snr.size() != 2) throw ConfigError(r.where("snr_range_db") + ": expected [low, high]");
    t.snr_low_db = snr[0];
    t.snr_high_db = snr[1];
    r.get("val_every", t.val_every);
    r.get("lr_milestones", t.lr_milestones);
    r.get("joint_spacings", t.joint_spacings);
    r.finish();
}

void read_sampler(const json& j, const std::string& path, sampler::SamplerConfig& s) {
    Reader r(j, path);
    r.get("steps", s.steps);
    std::string pipeline = sampler::pipeline_name(s.pipeline);
    r.get("pipeline", pipeline);
    s.pipeline = r.parse("pipeline", pipeline, sampler::parse_pipeline);
    r.get("resample_count", s.resample_count);
    r.get("jump_length", s.jump_length);
    r.get("candidates", s.candidates);
    r.get("soft_mask", s.soft_mask);
    r.get("terminal_overwrite", s.terminal_overwrite);
    r.finish();
}

void read_eval(const json& j, const std::string& path, EvalSpec& e) {
    Reader r(j, path);
    r.get("steps", e.steps);
    std::vector<std::string> pl;
    for (auto p : e.pipelines) pl.emplace_back(sampler::pipeline_name(p));
    r.get("pipelines", pl);
    e.pipelines.clear();
    for (const auto& p : pl) e.pipelines.push_back(r.parse("pipelines", p, sampler::parse_pipeline));
    r.get("estimators", e.estimators);
    for (const auto& name : e.estimators) r.parse("estimators", name, receiver::parse_estimator);
    r.get("snr_db", e.snr_db);
    r.get("sweep_snr_db", e.sweep_snr_db);
    r.get("n_grids", e.n_grids);
    r.get("n_frames", e.n_frames);
    r.get("ber_steps", e.ber_steps);
    r.finish();
}

} // namespace

RunConfig config_from_json(const json& j) {
    RunConfig c;
    Reader r(j, "");
    if (const json* s = r.child("channel")) read_channel(*s, "channel", c.channel);
    if (const json* s = r.child("dataset")) {
        Reader d(*s, "dataset");
        d.get("n_train", c.dataset.n_train);
        d.get("n_val", c.dataset.n_val);
        d.get("n_test", c.dataset.n_test);
        d.finish();
    }
    if (const json* s = r.child("pilots")) read_pilots(*s, "pilots", c.pilots, c.spacings);
    std::string mod = receiver::modulation_name(c.modulation);
    r.get("modulation", mod);
    c.modulation = receiver::parse_modulation(mod);
    if (const json* s = r.child("schedule")) {
        Reader d(*s, "schedule");
        d.get("T", c.schedule.T);
        d.get("beta_min", c.schedule.beta_min);
        d.get("beta_max", c.schedule.beta_max);
        d.finish();
    }
    if (const json* s = r.child("denoiser")) read_denoiser(*s, "denoiser", c.denoiser);
    if (const json* s = r.child("trainer")) read_trainer(*s, "trainer", c.trainer);
    if (const json* s = r.child("sampler")) read_sampler(*s, "sampler", c.sampler);
    if (const json* s = r.child("evaluation")) read_eval(*s, "evaluation", c.evaluation);
    if (const json* s = r.child("seed")) {
        if (!s->is_number_unsigned()) throw ConfigError("config.seed: expected an unsigned integer");
        c.seed = s->get<std::uint64_t>();
    }
    r.finish();
    c.validate();
    return c;
}

json config_to_json(const RunConfig& c) {
    json j;
    j["channel"] = {{"num_paths", c.channel.num_paths},
                    {"delay_spread", c.channel.delay_spread},
                    {"max_doppler", c.channel.max_doppler},
                    {"subcarrier_spacing", c.channel.subcarrier_spacing},
                    {"num_subcarriers", c.channel.num_subcarriers},
                    {"num_symbols", c.channel.num_symbols},
                    {"symbol_duration", c.channel.symbol_duration},
                    {"seed", c.channel.seed}};
    j["dataset"] = {{"n_train", c.dataset.n_train}, {"n_val", c.dataset.n_val}, {"n_test", c.dataset.n_test}};
    j["pilots"] = {{"scheme", pilots::scheme_name(c.pilots.scheme)},
                   {"spacings", c.spacings},
                   {"time_stride", c.pilots.time_stride},
                   {"block_symbols", c.pilots.block_symbols},
                   {"randomize_offset", c.pilots.randomize_offset}};
    j["modulation"] = receiver::modulation_name(c.modulation);
    j["schedule"] = {{"T", c.schedule.T}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}};
    j["denoiser"] = {{"base_channels", c.denoiser.base_channels}, {"depth", c.denoiser.depth},
                     {"kernel", c.denoiser.kernel},               {"time_embed_dim", c.denoiser.time_embed_dim},
                     {"groups", c.denoiser.groups},               {"x_skip", c.denoiser.x_skip}};
    j["trainer"] = {{"epochs", c.trainer.epochs},
                    {"batch_size", c.trainer.batch_size},
                    {"lr", c.trainer.lr},
                    {"snr_range_db", {c.trainer.snr_low_db, c.trainer.snr_high_db}},
                    {"val_every", c.trainer.val_every},
                    {"lr_milestones", c.trainer.lr_milestones},
                    {"joint_spacings", c.trainer.joint_spacings}};
    j["sampler"] = {{"steps", c.sampler.steps},
                    {"pipeline", sampler::pipeline_name(c.sampler.pipeline)},
                    {"resample_count", c.sampler.resample_count},
                    {"jump_length", c.sampler.jump_length},
                    {"candidates", c.sampler.candidates},
                    {"soft_mask", c.sampler.soft_mask},
                    {"terminal_overwrite", c.sampler.terminal_overwrite}};
    std::vector<std::string> pl;
    for (auto p : c.evaluation.pipelines) pl.emplace_back(sampler::pipeline_name(p));
    j["evaluation"] = {{"steps", c.evaluation.steps},
                       {"pipelines", pl},
                       {"estimators", c.evaluation.estimators},
                       {"snr_db", c.evaluation.snr_db},
                       {"sweep_snr_db", c.evaluation.sweep_snr_db},
                       {"n_grids", c.evaluation.n_grids},
                       {"n_frames", c.evaluation.n_frames},
                       {"ber_steps", c.evaluation.ber_steps}};
    if (c.seed) j["seed"] = *c.seed;
    return j;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& msg) {
        throw ConfigError("config." + field + ": " + msg);
    };
    try {
        channel.validate();
    } catch (const ConfigError& e) {
        fail("channel", e.what());
    }
    if (dataset.n_train == 0) fail("dataset.n_train", "must be >= 1");
    if (dataset.n_val == 0) fail("dataset.n_val", "must be >= 1");
    if (dataset.n_test == 0) fail("dataset.n_test", "must be >= 1");
    if (spacings.empty()) fail("pilots.spacings", "must list at least one comb spacing");
    for (std::size_t s : spacings)
        if (s < 1 || s > channel.num_subcarriers) fail("pilots.spacings", "every spacing must lie in [1, K]");
    if (schedule.T < 1) fail("schedule.T", "must be >= 1");
    if (!(schedule.beta_min > 0.0 && schedule.beta_min <= schedule.beta_max && schedule.beta_max < 1.0))
        fail("schedule", "need 0 < beta_min <= beta_max < 1");
    try {
        denoiser_config().validate();
    } catch (const ConfigError& e) {
        fail("denoiser", e.what());
    }
    try {
        train_config(spacings.front()).validate();
    } catch (const ConfigError& e) {
        fail("trainer", e.what());
    }
    try {
        sampler.validate(schedule.T);
    } catch (const ConfigError& e) {
        fail("sampler", e.what());
    }
    for (std::size_t s : evaluation.steps)
        if (s > schedule.T) fail("evaluation.steps", "every step count must be <= T");
    if (evaluation.ber_steps > schedule.T) fail("evaluation.ber_steps", "must be <= T");
    if (evaluation.n_grids == 0) fail("evaluation.n_grids", "must be >= 1");
    if (evaluation.n_grids > dataset.n_test) fail("evaluation.n_grids", "exceeds dataset.n_test");
    if (evaluation.n_frames == 0) fail("evaluation.n_frames", "must be >= 1");
}

trainer::TrainConfig RunConfig::train_config(std::size_t spacing) const {
    trainer::TrainConfig t = trainer;
    t.pilots = pilots;
    t.pilots.spacing = spacing;
    t.schedule = schedule;
    t.seed = derive_seed(seed_or_default(), spacing);
    return t;
}

denoiser::DenoiserConfig RunConfig::denoiser_config() const {
    denoiser::DenoiserConfig d = denoiser;
    d.schedule_T = schedule.T;
    d.beta_min = schedule.beta_min;
    d.beta_max = schedule.beta_max;
    return d;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string canonical_dump(const json& j) { return j.dump(); }

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw IoError("sha256 digest failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

std::string file_sha256(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(canonical_dump(config_to_json(cfg))); }

} // namespace diffrx::harness
