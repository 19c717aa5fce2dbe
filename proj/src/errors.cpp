#include "tltrade/errors.hpp"

namespace tlt {

Error::Error(std::string_view name, const std::string& what)
    : std::runtime_error(what), name_(name) {}

}  // namespace tlt
