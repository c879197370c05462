#pragma once

// Instruction templates used by the rewrite pipeline. The texts are fixed
// verbatim (detection-side experiments depend on the exact wording, typos
// included); slots {reference}, {masked}, {input}, {original}, {attacked}
// are substituted at render time.

#include <optional>
#include <string>
#include <string_view>

namespace wmlab {

inline constexpr std::string_view FILL_IN_TEMPLATE =
    "You will be shown one reference paragraph and one incomplete paragraph.\n"
    "Your task is to write a complete paragraph using incomplete paragraph.\n"
    "The complete paragraph should have similar length with reference paragraph.\n"
    "You need to include all the information in the reference.\n"
    "but do not take the expression and words in the reference paragraph.\n"
    "You should only answer the complete paragraph.\n"
    "reference:\n"
    "{reference}\n"
    "incomplete paragraph:\n"
    "{masked}";

inline constexpr std::string_view PARAPHRASE_TEMPLATE =
    "You are a paraphraser. You are given an input passage 'INPUT'. "
    "You should paraphrase 'INPUT' to print 'OUTPUT'. 'OUTPUT' should be "
    "diverse and different as much as possible from 'INPUT' and should not "
    "copy any part verbatim from 'INPUT'. However, 'OUTPUT' should preserve "
    "the information in the INPUT. You should print 'OUTPUT' and nothing "
    "else so that it is easy for me to parse.: \n"
    "{input}";

inline constexpr std::string_view JUDGE_TEMPLATE =
    "You are a helpful  assistant. You will receive a original text and a "
    "pharased text .Please act as an impartial judge and evaluate how much "
    "the  pharased text keep the original text semantic meaning.  Be as "
    "objective as possible. Rate the response on a scale from 1 to 10. "
    "A rating of 1 signifies the pharased text has totally different meaning "
    "with the original text. A rating of 10 signifies the pharased text has "
    "same meaning with the original text . Your answer should strictly be "
    "the format: [Rating].\n"
    "Here's the original text: {original}\n"
    "Here's the pharsed text:{attacked}";

struct PromptTemplates {
    std::string fill_in{FILL_IN_TEMPLATE};
    std::string paraphrase{PARAPHRASE_TEMPLATE};
    std::string judge{JUDGE_TEMPLATE};

    static PromptTemplates embedded() { return {}; }
    // Reads fill_in.txt / paraphrase.txt / judge.txt from a directory.
    static PromptTemplates from_dir(const std::string& dir);

    std::string render_fill_in(std::string_view reference, std::string_view masked) const;
    std::string render_paraphrase(std::string_view input) const;
    std::string render_judge(std::string_view original, std::string_view attacked) const;
};

// Anchors the local stub backend uses to recognize rendered prompts.
struct FillInSections {
    std::string reference;
    std::string masked;
};
std::optional<FillInSections> parse_fill_in_prompt(std::string_view prompt);
std::optional<std::string> parse_paraphrase_prompt(std::string_view prompt);

}  // namespace wmlab
