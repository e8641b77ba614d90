#pragma once

#include <string_view>
#include <vector>

namespace ddimedit::detail {

struct BuiltinTemplate {
    std::string_view name;
    std::string_view text;
};

// Generated at configure time from templates/*.tmpl.
const std::vector<BuiltinTemplate>& builtin_templates();

}  // namespace ddimedit::detail
