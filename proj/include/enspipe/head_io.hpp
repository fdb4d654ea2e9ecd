#ifndef ENSPIPE_HEAD_IO_HPP_
#define ENSPIPE_HEAD_IO_HPP_

#include <nlohmann/json.hpp>
#include <string>

#include "enspipe/head.hpp"

namespace enspipe {

// Doubles are written as C hex-float strings so the JSON round-trip is
// bit-exact.
std::string encodeDouble(double v);
double decodeDouble(const std::string& s);

nlohmann::ordered_json headToJson(const HeadParams& params,
                                  const HeadConfig& config);

std::pair<HeadParams, HeadConfig> headFromJson(const nlohmann::json& doc);

void saveHead(const std::string& path, const HeadParams& params,
              const HeadConfig& config);
std::pair<HeadParams, HeadConfig> loadHead(const std::string& path);

}  // namespace enspipe

#endif  // ENSPIPE_HEAD_IO_HPP_
