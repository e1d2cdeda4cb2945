#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sahp/model.hpp"

namespace sahp {

namespace {

using nlohmann::json;

constexpr char kBase64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned int chunk = static_cast<unsigned int>(data[i]) << 16;
        if (i + 1 < len) chunk |= static_cast<unsigned int>(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= static_cast<unsigned int>(data[i + 2]);
        out.push_back(kBase64Alphabet[(chunk >> 18) & 0x3f]);
        out.push_back(kBase64Alphabet[(chunk >> 12) & 0x3f]);
        out.push_back(i + 1 < len ? kBase64Alphabet[(chunk >> 6) & 0x3f] : '=');
        out.push_back(i + 2 < len ? kBase64Alphabet[chunk & 0x3f] : '=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        if (c == '=') return -1;
        throw DataError("checkpoint: invalid base64 character");
    };
    if (text.size() % 4 != 0) throw DataError("checkpoint: truncated base64 payload");
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int v0 = value_of(text[i]), v1 = value_of(text[i + 1]);
        int v2 = value_of(text[i + 2]), v3 = value_of(text[i + 3]);
        if (v0 < 0 || v1 < 0) throw DataError("checkpoint: malformed base64 payload");
        unsigned int chunk = (static_cast<unsigned int>(v0) << 18) | (static_cast<unsigned int>(v1) << 12);
        out.push_back(static_cast<unsigned char>((chunk >> 16) & 0xff));
        if (v2 >= 0) {
            chunk |= static_cast<unsigned int>(v2) << 6;
            out.push_back(static_cast<unsigned char>((chunk >> 8) & 0xff));
        }
        if (v3 >= 0) {
            if (v2 < 0) throw DataError("checkpoint: malformed base64 padding");
            chunk |= static_cast<unsigned int>(v3);
            out.push_back(static_cast<unsigned char>(chunk & 0xff));
        }
    }
    return out;
}

json tensor_entry(const std::string& name, const double* data, Eigen::Index rows, Eigen::Index cols) {
    const std::size_t bytes = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * sizeof(double);
    return json{{"name", name},
                {"rows", rows},
                {"cols", cols},
                {"dtype", "float64"},
                {"data", base64_encode(reinterpret_cast<const unsigned char*>(data), bytes)}};
}

void fill_tensor(const json& entry, double* data, Eigen::Index rows, Eigen::Index cols) {
    if (entry.at("dtype").get<std::string>() != "float64") throw DataError("checkpoint: unsupported dtype");
    if (entry.at("rows").get<Eigen::Index>() != rows || entry.at("cols").get<Eigen::Index>() != cols) {
        throw DataError("checkpoint: tensor \"" + entry.at("name").get<std::string>() +
                        "\" has unexpected shape");
    }
    const auto bytes = base64_decode(entry.at("data").get<std::string>());
    const std::size_t expected = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * sizeof(double);
    if (bytes.size() != expected) throw DataError("checkpoint: payload size mismatch");
    std::memcpy(data, bytes.data(), expected);
}

json config_to_json(const SAHPConfig& config) {
    return json{{"num_types", config.num_types},
                {"model_dim", config.model_dim},
                {"num_heads", config.num_heads},
                {"num_layers", config.num_layers},
                {"dropout_rate", config.dropout_rate},
                {"encoding_mode", to_string(config.encoding_mode)},
                {"similarity_scaling", config.similarity_scaling},
                {"time_rescale", config.time_rescale}};
}

SAHPConfig config_from_json(const json& j) {
    SAHPConfig config;
    config.num_types = j.at("num_types").get<int>();
    config.model_dim = j.at("model_dim").get<int>();
    config.num_heads = j.at("num_heads").get<int>();
    config.num_layers = j.at("num_layers").get<int>();
    config.dropout_rate = j.at("dropout_rate").get<double>();
    config.encoding_mode = encoding_mode_from_string(j.at("encoding_mode").get<std::string>());
    config.similarity_scaling = j.at("similarity_scaling").get<bool>();
    if (j.contains("time_rescale")) config.time_rescale = j.at("time_rescale").get<double>();
    config.validate();
    return config;
}

}  // namespace

std::string checkpoint_to_json(const ModelParams& params, const SAHPConfig& config) {
    json tensors = json::array();
    params.for_each_trainable([&tensors](const std::string& name, const ad::Mat& m) {
        tensors.push_back(tensor_entry(name, m.data(), m.rows(), m.cols()));
    });
    tensors.push_back(
        tensor_entry("angular_freq", params.angular_freq.data(), params.angular_freq.size(), 1));
    json j{{"format", "sahp-checkpoint-v1"}, {"config", config_to_json(config)}, {"tensors", tensors}};
    return j.dump(2) + "\n";
}

std::pair<ModelParams, SAHPConfig> checkpoint_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("checkpoint parse error: ") + e.what());
    }
    if (!j.contains("format") || j.at("format").get<std::string>() != "sahp-checkpoint-v1") {
        throw DataError("checkpoint: unknown container format");
    }
    SAHPConfig config = config_from_json(j.at("config"));
    ModelParams params = init_params(config, 0);  // shapes only; every tensor is overwritten below

    std::map<std::string, const json*> entries;
    for (const auto& entry : j.at("tensors")) {
        entries[entry.at("name").get<std::string>()] = &entry;
    }
    auto take = [&entries](const std::string& name) -> const json& {
        auto it = entries.find(name);
        if (it == entries.end()) throw DataError("checkpoint: missing tensor \"" + name + "\"");
        return *it->second;
    };
    params.for_each_trainable([&take](const std::string& name, ad::Mat& m) {
        fill_tensor(take(name), m.data(), m.rows(), m.cols());
    });
    fill_tensor(take("angular_freq"), params.angular_freq.data(), params.angular_freq.size(), 1);
    return {std::move(params), config};
}

void save_checkpoint(const ModelParams& params, const SAHPConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint file for writing: " + path.string());
    out << checkpoint_to_json(params, config);
    if (!out) throw DataError("checkpoint write failed: " + path.string());
}

std::pair<ModelParams, SAHPConfig> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_json(buf.str());
}

}  // namespace sahp
