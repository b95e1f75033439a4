#include "stvad/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace stvad::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_int(key, item));
    }
    if (out.empty())
        throw std::invalid_argument("config key '" + key + "': expected a comma list of integers");
    return out;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(12);
    ss << v;
    return ss.str();
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Field>& registry() {
    static const std::map<std::string, Field> fields = [] {
        std::map<std::string, Field> f;
        auto add_int = [&](const std::string& k, int RunConfig::* p) {
            f[k] = {[p](RunConfig& c, const std::string& key, const std::string& v) {
                        c.*p = parse_int(key, v);
                    },
                    [p](const RunConfig& c) { return std::to_string(c.*p); }};
        };
        auto add_double = [&](const std::string& k, double RunConfig::* p) {
            f[k] = {[p](RunConfig& c, const std::string& key, const std::string& v) {
                        c.*p = parse_double(key, v);
                    },
                    [p](const RunConfig& c) { return fmt(c.*p); }};
        };
        auto add_bool = [&](const std::string& k, bool RunConfig::* p) {
            f[k] = {[p](RunConfig& c, const std::string& key, const std::string& v) {
                        c.*p = parse_bool(key, v);
                    },
                    [p](const RunConfig& c) { return c.*p ? "true" : "false"; }};
        };
        auto add_string = [&](const std::string& k, std::string RunConfig::* p) {
            f[k] = {[p](RunConfig& c, const std::string&, const std::string& v) { c.*p = v; },
                    [p](const RunConfig& c) { return c.*p; }};
        };

        add_int("input_h", &RunConfig::input_h);
        add_int("input_w", &RunConfig::input_w);
        add_int("image_channels", &RunConfig::image_channels);
        add_int("clip_len", &RunConfig::clip_len);
        add_int("levels", &RunConfig::levels);
        f["channels"] = {[](RunConfig& c, const std::string& key, const std::string& v) {
                             c.channels = parse_int_list(key, v);
                         },
                         [](const RunConfig& c) {
                             std::string s;
                             for (std::size_t i = 0; i < c.channels.size(); ++i) {
                                 if (i) s += ",";
                                 s += std::to_string(c.channels[i]);
                             }
                             return s;
                         }};
        add_int("memory_items", &RunConfig::memory_items);
        add_double("shift_fraction", &RunConfig::shift_fraction);
        add_bool("shift_bidirectional", &RunConfig::shift_bidirectional);
        add_double("leaky_slope", &RunConfig::leaky_slope);
        add_int("reduction_ratio", &RunConfig::reduction_ratio);
        add_bool("batchnorm_enabled", &RunConfig::batchnorm_enabled);
        add_bool("memory_enabled", &RunConfig::memory_enabled);
        add_string("fusion_mode", &RunConfig::fusion_mode);

        add_double("alpha_s", &RunConfig::alpha_s);
        add_double("beta_s", &RunConfig::beta_s);
        add_double("gamma_i", &RunConfig::gamma_i);
        add_double("margin_a", &RunConfig::margin_a);
        add_double("margin_b", &RunConfig::margin_b);
        add_bool("loss_hinge", &RunConfig::loss_hinge);
        add_bool("loss_square_second", &RunConfig::loss_square_second);
        add_string("prediction_loss_mode", &RunConfig::prediction_loss_mode);

        add_double("learning_rate", &RunConfig::learning_rate);
        add_double("adam_rho1", &RunConfig::adam_rho1);
        add_double("adam_rho2", &RunConfig::adam_rho2);
        add_int("batch_size", &RunConfig::batch_size);
        add_int("epochs", &RunConfig::epochs);
        f["seed"] = {[](RunConfig& c, const std::string& key, const std::string& v) {
                         c.seed = parse_u64(key, v);
                     },
                     [](const RunConfig& c) { return std::to_string(c.seed); }};

        add_double("lambda", &RunConfig::lambda);
        add_string("psnr_convention", &RunConfig::psnr_convention);
        add_string("normalization_scope", &RunConfig::normalization_scope);

        add_bool("grayscale", &RunConfig::grayscale);
        add_int("synth_train_videos", &RunConfig::synth_train_videos);
        add_int("synth_test_videos", &RunConfig::synth_test_videos);
        add_int("synth_train_frames", &RunConfig::synth_train_frames);
        add_int("synth_test_frames", &RunConfig::synth_test_frames);
        add_int("synth_sprites", &RunConfig::synth_sprites);

        add_bool("dump_error_maps", &RunConfig::dump_error_maps);

        add_string("data_root", &RunConfig::data_root);
        add_string("out_dir", &RunConfig::out_dir);
        add_string("checkpoint", &RunConfig::checkpoint);
        add_string("frames_dir", &RunConfig::frames_dir);
        return f;
    }();
    return fields;
}

}  // namespace

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto it = registry().find(key);
    if (it == registry().end())
        throw std::invalid_argument("unknown config key '" + key + "'");
    it->second.set(cfg, key, value);
}

void apply_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string echo(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : registry()) out += key + " = " + field.get(cfg) + "\n";
    return out;
}

void validate(const RunConfig& cfg) {
    model_config(cfg).validate();
    loss_weights<double>(cfg).validate();
    if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
        throw std::invalid_argument("config: lambda must lie in [0, 1]");
    if (cfg.batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
    if (cfg.epochs < 1) throw std::invalid_argument("config: epochs must be positive");
    if (cfg.learning_rate <= 0.0)
        throw std::invalid_argument("config: learning_rate must be positive");
    if (cfg.adam_rho1 < 0.0 || cfg.adam_rho1 >= 1.0 || cfg.adam_rho2 < 0.0 || cfg.adam_rho2 >= 1.0)
        throw std::invalid_argument("config: adam momentum parameters must lie in [0, 1)");
    if (cfg.fusion_mode != "mean_motion_compensated" && cfg.fusion_mode != "literal_sum")
        throw std::invalid_argument("config: fusion_mode must be mean_motion_compensated or "
                                    "literal_sum");
    if (cfg.psnr_convention != "paper" && cfg.psnr_convention != "standard")
        throw std::invalid_argument("config: psnr_convention must be paper or standard");
    if (cfg.normalization_scope != "per_video" && cfg.normalization_scope != "global")
        throw std::invalid_argument("config: normalization_scope must be per_video or global");
    if (cfg.prediction_loss_mode != "mean" && cfg.prediction_loss_mode != "sum")
        throw std::invalid_argument("config: prediction_loss_mode must be mean or sum");
    if (cfg.synth_train_videos < 1 || cfg.synth_test_videos < 1 || cfg.synth_sprites < 1)
        throw std::invalid_argument("config: synthetic generator counts must be positive");
    if (cfg.synth_train_frames < cfg.clip_len + 1 || cfg.synth_test_frames < cfg.clip_len + 1)
        throw std::invalid_argument("config: synthetic videos need at least clip_len+1 frames");
}

network::ModelConfig model_config(const RunConfig& cfg) {
    network::ModelConfig m;
    m.input_h = cfg.input_h;
    m.input_w = cfg.input_w;
    m.image_channels = cfg.image_channels;
    m.clip_len = cfg.clip_len;
    m.channels = cfg.channels;
    m.levels = cfg.levels;
    m.memory_items = cfg.memory_items;
    m.shift_fraction = cfg.shift_fraction;
    m.leaky_slope = cfg.leaky_slope;
    m.reduction_ratio = cfg.reduction_ratio;
    m.shift_bidirectional = cfg.shift_bidirectional;
    m.batchnorm_enabled = cfg.batchnorm_enabled;
    m.memory_enabled = cfg.memory_enabled;
    m.fusion = cfg.fusion_mode == "literal_sum" ? network::FusionMode::literal_sum
                                                : network::FusionMode::mean_motion_compensated;
    return m;
}

losses::DiscretizationOptions discretization_options(const RunConfig& cfg) {
    losses::DiscretizationOptions o;
    o.hinge = cfg.loss_hinge;
    o.square_second = cfg.loss_square_second;
    return o;
}

losses::PredictionLossMode prediction_mode(const RunConfig& cfg) {
    return cfg.prediction_loss_mode == "sum" ? losses::PredictionLossMode::sum
                                             : losses::PredictionLossMode::mean;
}

}  // namespace stvad::config
