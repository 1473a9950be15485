#include "resdistill/metrics.hpp"
