"""Learned replanning trigger: regressor training and decision evaluation."""
