#include "enspipe/head_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace enspipe {

namespace {

constexpr int kFormatVersion = 1;

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

ojson encodeVector(const Vector& v) {
  ojson arr = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    arr.push_back(encodeDouble(v[i]));
  }
  return arr;
}

ojson encodeMatrixRowMajor(const Matrix& m) {
  ojson arr = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      arr.push_back(encodeDouble(m(r, c)));
    }
  }
  return arr;
}

Vector decodeVector(const json& arr) {
  Vector v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = decodeDouble(arr[i].get<std::string>());
  }
  return v;
}

Matrix decodeMatrixRowMajor(const json& arr, Eigen::Index rows,
                            Eigen::Index cols) {
  if (static_cast<Eigen::Index>(arr.size()) != rows * cols) {
    throw IoError("head json: weight array length does not match shape");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = decodeDouble(arr[k++].get<std::string>());
    }
  }
  return m;
}

}  // namespace

std::string encodeDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double decodeDouble(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) {
    throw IoError("head json: malformed hex-float '" + s + "'");
  }
  return v;
}

ojson headToJson(const HeadParams& params, const HeadConfig& config) {
  ojson doc;
  doc["format_version"] = kFormatVersion;
  doc["config"] = {
      {"input_dim", config.input_dim},
      {"hidden_dims",
       {config.hidden_dims[0], config.hidden_dims[1], config.hidden_dims[2]}},
      {"num_classes", config.num_classes},
      {"lambda", config.lambda},
      {"dropout_rate", config.dropout_rate},
      {"epsilon", config.epsilon},
      {"r_max", config.r_max},
      {"d_max", config.d_max},
      {"momentum", config.momentum},
      {"learning_rate", config.learning_rate},
      {"batch_size", config.batch_size},
      {"max_epochs", config.max_epochs},
      {"patience", config.patience},
      {"seed", config.seed},
  };
  doc["dense"] = ojson::array();
  for (const DenseLayer& layer : params.dense) {
    ojson l;
    l["out_dim"] = layer.W.rows();
    l["in_dim"] = layer.W.cols();
    l["lambda"] = layer.lambda;
    l["W"] = encodeMatrixRowMajor(layer.W);
    l["b"] = encodeVector(layer.b);
    doc["dense"].push_back(std::move(l));
  }
  doc["renorm"] = ojson::array();
  for (const BatchRenormLayer& layer : params.renorm) {
    ojson l;
    l["dim"] = layer.gamma.size();
    l["gamma"] = encodeVector(layer.gamma);
    l["beta"] = encodeVector(layer.beta);
    l["running_mean"] = encodeVector(layer.running_mean);
    l["running_var"] = encodeVector(layer.running_var);
    l["epsilon"] = layer.epsilon;
    l["r_max"] = layer.r_max;
    l["d_max"] = layer.d_max;
    l["momentum"] = layer.momentum;
    doc["renorm"].push_back(std::move(l));
  }
  return doc;
}

std::pair<HeadParams, HeadConfig> headFromJson(const json& doc) {
  if (!doc.contains("format_version") ||
      doc["format_version"].get<int>() != kFormatVersion) {
    throw IoError("head json: missing or unsupported format_version");
  }
  HeadConfig config;
  const json& c = doc.at("config");
  config.input_dim = c.at("input_dim").get<Eigen::Index>();
  auto hd = c.at("hidden_dims");
  config.hidden_dims = {hd.at(0).get<Eigen::Index>(),
                        hd.at(1).get<Eigen::Index>(),
                        hd.at(2).get<Eigen::Index>()};
  config.num_classes = c.at("num_classes").get<Eigen::Index>();
  config.lambda = c.at("lambda").get<double>();
  config.dropout_rate = c.at("dropout_rate").get<double>();
  config.epsilon = c.at("epsilon").get<double>();
  config.r_max = c.at("r_max").get<double>();
  config.d_max = c.at("d_max").get<double>();
  config.momentum = c.at("momentum").get<double>();
  config.learning_rate = c.at("learning_rate").get<double>();
  config.batch_size = c.at("batch_size").get<Eigen::Index>();
  config.max_epochs = c.at("max_epochs").get<int>();
  config.patience = c.at("patience").get<int>();
  config.seed = c.at("seed").get<std::uint64_t>();

  HeadParams params;
  for (const json& l : doc.at("dense")) {
    DenseLayer layer;
    Eigen::Index out = l.at("out_dim").get<Eigen::Index>();
    Eigen::Index in = l.at("in_dim").get<Eigen::Index>();
    layer.lambda = l.at("lambda").get<double>();
    layer.W = decodeMatrixRowMajor(l.at("W"), out, in);
    layer.b = decodeVector(l.at("b"));
    params.dense.push_back(std::move(layer));
  }
  for (const json& l : doc.at("renorm")) {
    BatchRenormLayer layer;
    layer.gamma = decodeVector(l.at("gamma"));
    layer.beta = decodeVector(l.at("beta"));
    layer.running_mean = decodeVector(l.at("running_mean"));
    layer.running_var = decodeVector(l.at("running_var"));
    layer.epsilon = l.at("epsilon").get<double>();
    layer.r_max = l.at("r_max").get<double>();
    layer.d_max = l.at("d_max").get<double>();
    layer.momentum = l.at("momentum").get<double>();
    params.renorm.push_back(std::move(layer));
  }
  return {std::move(params), config};
}

void saveHead(const std::string& path, const HeadParams& params,
              const HeadConfig& config) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open for writing: " + path);
  }
  out << headToJson(params, config).dump(2) << "\n";
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

std::pair<HeadParams, HeadConfig> loadHead(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open: " + path);
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("parse error in " + path + ": " + e.what());
  }
  return headFromJson(doc);
}

}  // namespace enspipe
