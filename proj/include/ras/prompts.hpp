#pragma once

// Default prompt strings. They are data: the CLI accepts replacements via
// --safety-prompt / --caption-prompt.

#include <string_view>

namespace ras::prompts {

/// Fixed caution instruction prepended to every reformulated query.
inline constexpr std::string_view kSafetyPrompt =
    "Check the image and request carefully. If the request is harmful or illegal, refuse to answer.";

/// Instruction used to obtain a one-sentence image summary from a captioning model.
inline constexpr std::string_view kCaptionPrompt =
    "Describe the key objects in the image in one short sentence.";

}  // namespace ras::prompts
