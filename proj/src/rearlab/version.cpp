#include "rearlab/version.hpp"

namespace rear {

const char* version_string() { return "0.1.0"; }

}  // namespace rear
