#pragma once

#include <string>
#include <vector>

// Ten segments scored offline with sacrebleu 2.1.0 (CHRF defaults,
// signature nrefs:1|case:mixed|eff:yes|nc:6|nw:0|space:no|version:2.1.0).
namespace golden {

inline const std::vector<std::string> kHyps = {
    "El gato está sobre la mesa.", "¿Dónde queda la estación?", "Mañana lloverá en Cusco", "kuka ñuqa wasi", "",
    "Los niños juegan en el parque .", "ka⁴² tsa³ ni", "A", "Buenos días, señora Rodríguez", "ñandutí"};

inline const std::vector<std::string> kRefs = {
    "El gato está en la mesa.", "¿Dónde está la estación de tren?", "Mañana va a llover en Cusco", "kay ñuqap wasiy",
    "algo", "Los niños juegan en el parque.", "ka⁴² tsa² nì", "a", "Buenos días señora Rodríguez", "ñandutí"};

inline constexpr double kCorpus = 69.89600721701166;
inline constexpr double kCorpusEpsSmoothing = 69.89552452238817;
inline constexpr double kCorpusLowercase = 70.00609219634381;

inline const std::vector<double> kSentences = {69.71101290745835, 48.58370740730742, 62.772567914799794,
                                               32.4823705402043,  0.0,               100.0,
                                               59.38492063492063, 0.0,               87.4662500045189,
                                               100.0};

}  // namespace golden
