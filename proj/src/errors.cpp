#include "ddae/errors.hpp"

#include <sstream>

namespace ddae {

namespace {
std::string divergence_message(const std::string& term, double value) {
    std::ostringstream os;
    os << "training diverged: " << term << " is non-finite (" << value << ")";
    return os.str();
}
}  // namespace

DivergenceError::DivergenceError(std::string term, double value)
    : std::runtime_error(divergence_message(term, value)), term_(std::move(term)) {}

UnknownSiteError::UnknownSiteError(const std::string& label, const std::string& vocabulary)
    : std::invalid_argument("unknown site '" + label + "' (vocabulary: " + vocabulary + ")"), label_(label) {}

}  // namespace ddae
