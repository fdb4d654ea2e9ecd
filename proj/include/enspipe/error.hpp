#ifndef ENSPIPE_ERROR_HPP_
#define ENSPIPE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace enspipe {

// Invalid input data, shapes, or arguments. CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem or parse failure. CLI maps this to exit code 2.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace enspipe

#endif  // ENSPIPE_ERROR_HPP_
