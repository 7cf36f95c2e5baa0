#include "phast/rng.hpp"

// CounterRng is header-only; this translation unit anchors the header in the
// library so every consumer compiles against one definition.
namespace phast {}
