#pragma once

#include <cstdio>
#include <string>

namespace engage {

inline void log_info(const std::string& msg) {
    std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

inline void log_warn(const std::string& msg) {
    std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

}  // namespace engage
