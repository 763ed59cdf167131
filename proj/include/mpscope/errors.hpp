#pragma once

#include <stdexcept>

namespace mpscope {

// Error classes map to CLI exit codes: io_error -> 2, config_error -> 3,
// numeric_error -> 4.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mpscope
