""" Classic control tasks and the agents that learn them. """
