#include "gnnsup/json_io.hpp"

namespace gnnsup {

namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"arch", to_string(c.arch)},
                       {"input_dim", c.input_dim},
                       {"layer_widths", c.layer_widths},
                       {"pooling",
                        {{"kind", to_string(c.pooling.kind)},
                         {"p", c.pooling.p},
                         {"scope", to_string(c.pooling.scope)},
                         {"epsilon", c.pooling.epsilon}}},
                       {"final_activation", to_string(c.final_activation)},
                       {"leaky_slope", c.leaky_slope},
                       {"num_outputs", c.num_outputs},
                       {"gin_hidden", c.gin_hidden},
                       {"gin_activation", to_string(c.gin_activation)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (j.contains("arch")) c.arch = arch_from_string(j.at("arch").get<std::string>());
    read_opt(j, "input_dim", c.input_dim);
    read_opt(j, "layer_widths", c.layer_widths);
    if (j.contains("pooling")) {
        const auto& p = j.at("pooling");
        if (p.contains("kind")) c.pooling.kind = pool_kind_from_string(p.at("kind").get<std::string>());
        read_opt(p, "p", c.pooling.p);
        if (p.contains("scope")) c.pooling.scope = pool_scope_from_string(p.at("scope").get<std::string>());
        read_opt(p, "epsilon", c.pooling.epsilon);
    }
    if (j.contains("final_activation"))
        c.final_activation = activation_from_string(j.at("final_activation").get<std::string>());
    read_opt(j, "leaky_slope", c.leaky_slope);
    read_opt(j, "num_outputs", c.num_outputs);
    read_opt(j, "gin_hidden", c.gin_hidden);
    if (j.contains("gin_activation"))
        c.gin_activation = activation_from_string(j.at("gin_activation").get<std::string>());
}

void to_json(nlohmann::json& j, const PairwiseConfig& c) {
    j = nlohmann::json{{"num_types", c.num_types},
                       {"chain_length", c.chain_length},
                       {"activation_prob", c.activation_prob},
                       {"num_graphs", c.num_graphs},
                       {"train_fraction", c.train_fraction}};
}

void from_json(const nlohmann::json& j, PairwiseConfig& c) {
    read_opt(j, "num_types", c.num_types);
    read_opt(j, "chain_length", c.chain_length);
    read_opt(j, "activation_prob", c.activation_prob);
    read_opt(j, "num_graphs", c.num_graphs);
    read_opt(j, "train_fraction", c.train_fraction);
}

void to_json(nlohmann::json& j, const ConjunctionConfig& c) {
    j = nlohmann::json{{"p_extra", c.p_extra},
                       {"num_graphs", c.num_graphs},
                       {"train_fraction", c.train_fraction},
                       {"label_mix", c.label_mix}};
}

void from_json(const nlohmann::json& j, ConjunctionConfig& c) {
    read_opt(j, "p_extra", c.p_extra);
    read_opt(j, "num_graphs", c.num_graphs);
    read_opt(j, "train_fraction", c.train_fraction);
    read_opt(j, "label_mix", c.label_mix);
}

}  // namespace gnnsup
