#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nst/error.hpp"
#include "nst/hash.hpp"
#include "nst/nn.hpp"

namespace nst {

// Checkpoint container: one line of JSON (arch, layer specs, rng state,
// training step, block index) terminated by '\n', followed by the raw
// little-endian float64 parameter blocks in layer order.

inline nlohmann::json layer_spec_to_json(const LayerSpec& s) {
    return {{"kind", to_string(s.kind)},
            {"width", s.width},
            {"activation", s.activation == Activation::Relu ? "relu" : "none"}};
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
    LayerSpec s;
    s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    s.width = j.at("width").get<std::size_t>();
    s.activation = j.at("activation").get<std::string>() == "relu" ? Activation::Relu
                                                                   : Activation::None;
    return s;
}

inline void save_model(const Model& m, const std::string& path) {
    nlohmann::json header;
    header["format"] = "nst-checkpoint-v1";
    header["arch_id"] = m.arch_id;
    header["input"] = {m.input.h, m.input.w, m.input.c};
    header["class_count"] = m.class_count;
    header["rng_state"] = m.rng_state;
    header["train_step"] = m.train_step;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : m.layers) layers.push_back(layer_spec_to_json(s));
    header["layers"] = layers;
    nlohmann::json blocks = nlohmann::json::array();
    for (std::size_t i = 0; i < m.params.size(); ++i)
        for (std::size_t j = 0; j < m.params[i].t.size(); ++j)
            blocks.push_back({{"layer", i}, {"tensor", j}, {"shape", m.params[i].t[j].shape}});
    header["blocks"] = blocks;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing", path);
    out << header.dump() << '\n';
    for (const auto& lp : m.params)
        for (const auto& t : lp.t)
            out.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!out) throw IoError("checkpoint write failed", path);
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint", path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing checkpoint header", 0);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad checkpoint header: ") + e.what(), 0);
    }
    if (header.value("format", "") != "nst-checkpoint-v1")
        throw ParseError("unknown checkpoint format", 0);

    Model m;
    m.arch_id = header.at("arch_id").get<std::string>();
    auto inp = header.at("input");
    m.input = ImageShape{inp.at(0).get<std::size_t>(), inp.at(1).get<std::size_t>(),
                         inp.at(2).get<std::size_t>()};
    m.class_count = header.at("class_count").get<std::size_t>();
    m.rng_state = header.at("rng_state").get<std::uint64_t>();
    m.train_step = header.at("train_step").get<std::uint64_t>();
    for (const auto& j : header.at("layers")) m.layers.push_back(layer_spec_from_json(j));
    m.params.resize(m.layers.size());

    for (const auto& b : header.at("blocks")) {
        const auto layer = b.at("layer").get<std::size_t>();
        const auto shape = b.at("shape").get<std::vector<std::size_t>>();
        Tensor t(shape);
        const std::size_t pos = static_cast<std::size_t>(in.tellg());
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != t.data.size() * sizeof(double))
            throw ParseError("truncated checkpoint block", pos);
        if (layer >= m.params.size()) throw ParseError("block layer index out of range", pos);
        m.params[layer].t.push_back(std::move(t));
    }
    validate_model(m);
    return m;
}

// Content hash over architecture and parameters; used as the checkpoint
// identity in manifests and reports.
inline std::string model_hash(const Model& m) {
    ContentHash h;
    h.update(m.arch_id);
    h.update_pod(m.input.h);
    h.update_pod(m.input.w);
    h.update_pod(m.input.c);
    h.update_pod(m.class_count);
    for (const auto& lp : m.params)
        for (const auto& t : lp.t) h.update(t.data);
    return h.hex();
}

}  // namespace nst
