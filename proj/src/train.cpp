#include "ecgdelin/train.hpp"

namespace ecg::train {

void model_config_to_json(const nn::ModelConfig& config, nlohmann::json& j) {
    j = nlohmann::json{{"in_channels", config.in_channels},
                       {"conv_filters", config.conv_filters},
                       {"kernel_size", config.kernel_size},
                       {"lstm_units", config.lstm_units},
                       {"dropout", config.dropout},
                       {"n_classes", config.n_classes}};
}

nn::ModelConfig model_config_from_json(const nlohmann::json& j) {
    nn::ModelConfig config;
    config.in_channels = j.at("in_channels").get<int>();
    config.conv_filters = j.at("conv_filters").get<std::vector<int>>();
    config.kernel_size = j.at("kernel_size").get<int>();
    config.lstm_units = j.at("lstm_units").get<std::vector<int>>();
    config.dropout = j.at("dropout").get<double>();
    config.n_classes = j.at("n_classes").get<int>();
    return config;
}

}  // namespace ecg::train
