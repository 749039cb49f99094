#pragma once

namespace rear {

const char* version_string();

}  // namespace rear
