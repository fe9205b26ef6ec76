#ifndef RTN_CONFIG_HPP_
#define RTN_CONFIG_HPP_

#include <string>

#include "rtn/train.hpp"

namespace rtn {

// Sectioned key=value run configuration. Unknown sections or keys are
// rejected; parse -> serialize -> parse is a fixed point.
TrainConfig parse_config_text(const std::string& text);
std::string serialize_config(const TrainConfig& cfg);

TrainConfig load_config_file(const std::string& path);
void save_config_file(const TrainConfig& cfg, const std::string& path);

}  // namespace rtn

#endif  // RTN_CONFIG_HPP_
