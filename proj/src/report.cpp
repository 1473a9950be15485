#include "resdistill/report.hpp"
