"""Physical constants shared across modules."""

# assumed freezing temperature of sea water; observations never fall below
# this and predictive draws are clamped here when truncation is enabled
PHYSICAL_FLOOR_C = -1.79
