"""Energy lifestyles from hourly smart-meter readings."""
