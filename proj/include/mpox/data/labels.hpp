#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "mpox/core/error.hpp"

namespace mpox {

/// Source label of an image. Integer codes follow the multiclass
/// confusion-matrix ordering: Acne=0, Chickenpox=1, Mpox=2, Healthy=3.
enum class ClassLabel : int { acne = 0, chickenpox = 1, mpox = 2, healthy = 3 };

inline constexpr int kMulticlassCount = 4;

enum class TaskKind { binary, multiclass };

inline int class_count(TaskKind task) { return task == TaskKind::binary ? 2 : kMulticlassCount; }

inline const std::vector<std::string>& class_names(TaskKind task) {
    static const std::vector<std::string> binary{"Mpox", "Others"};
    static const std::vector<std::string> multi{"Acne", "Chickenpox", "Mpox", "Healthy"};
    return task == TaskKind::binary ? binary : multi;
}

inline const char* to_string(ClassLabel label) {
    static constexpr std::array<const char*, 4> names{"Acne", "Chickenpox", "Mpox", "Healthy"};
    return names[static_cast<int>(label)];
}

inline const char* to_string(TaskKind task) { return task == TaskKind::binary ? "binary" : "multiclass"; }

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

inline ClassLabel parse_class_label(std::string_view text) {
    const std::string s = lowercase(text);
    if (s == "acne") return ClassLabel::acne;
    if (s == "chickenpox") return ClassLabel::chickenpox;
    if (s == "mpox" || s == "monkeypox") return ClassLabel::mpox;
    if (s == "healthy" || s == "normal") return ClassLabel::healthy;
    fail(ErrorCode::parse, "unknown class label '" + std::string(text) + "'");
}

inline TaskKind parse_task(std::string_view text) {
    const std::string s = lowercase(text);
    if (s == "binary") return TaskKind::binary;
    if (s == "multiclass") return TaskKind::multiclass;
    fail(ErrorCode::parse, "unknown task '" + std::string(text) + "' (binary|multiclass)");
}

/// Target code of a source label for a task: binary is Mpox=0, Others=1.
inline int target_code(ClassLabel label, TaskKind task) {
    if (task == TaskKind::multiclass) return static_cast<int>(label);
    return label == ClassLabel::mpox ? 0 : 1;
}

}  // namespace mpox
