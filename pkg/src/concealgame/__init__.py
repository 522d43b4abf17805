"""Identity concealment games: equilibrium synthesis, passive opponent learning and detection."""
