#pragma once

#include <map>
#include <string>

namespace krsvqg {

// "key = value" lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_kv_file(const std::string& path);

}  // namespace krsvqg
