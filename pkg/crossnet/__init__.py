# crossnet - cross-view aerial-to-ground semantic transformation
